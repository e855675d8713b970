//! Attack and defense experiment harnesses: chip-bound hybrid retraining,
//! the weight-cloning attack, random-key attacks on shuffled layers, and the
//! configuration sweeps behind the accuracy/overhead trade-off studies.

use std::sync::Arc;

use crate::adcvar::{gen_fingerprint, AdcConfig, AdcKind, ChipFingerprint};
use crate::error::{Error, Result};
use crate::netcore::layers::{LayerKind, NetworkSpec};
use crate::netcore::train::{
    evaluate_with, run_epoch, FloatModel, HyperParams, SgdState,
};
use crate::netcore::Dataset;
use crate::rng::derive_key;
use crate::shufflekey::{key_with_matches, LayerKeys};
use crate::xbar::{map_network, AdcMode, HwExec, HwFactory, MappedNet, MappingMode};

/// A set of chip instances sharing one ADC configuration. The victim is the
/// chip the model gets bound to; the rest model cloned deployments.
#[derive(Debug, Clone)]
pub struct ChipPopulation {
    pub seeds: Vec<u64>,
    pub config: AdcConfig,
    pub victim: usize,
}

impl ChipPopulation {
    pub fn new(seeds: Vec<u64>, config: AdcConfig, victim: usize) -> Result<Self> {
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != seeds.len() {
            return Err(Error::Invalid("chip seeds must be distinct".into()));
        }
        if victim >= seeds.len() {
            return Err(Error::Invalid(format!(
                "victim index {victim} outside population of {}",
                seeds.len()
            )));
        }
        Ok(ChipPopulation { seeds, config, victim })
    }

    /// Derives `size` distinct chip seeds from one experiment seed.
    pub fn generate(seed: u64, size: usize, config: AdcConfig) -> Result<Self> {
        let seeds = (0..size).map(|i| derive_key(seed, &[0xc41b, i as u64])).collect();
        Self::new(seeds, config, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Chips,
    RandomKeys,
    LayerCount,
    LayerLocation,
    BitPlanes,
    MatchedDigits,
    OffsetCells,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Chips => "chips",
            SweepAxis::RandomKeys => "random-keys",
            SweepAxis::LayerCount => "layer-count",
            SweepAxis::LayerLocation => "layer-location",
            SweepAxis::BitPlanes => "bit-planes",
            SweepAxis::MatchedDigits => "matched-digits",
            SweepAxis::OffsetCells => "offset-cells",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub label: String,
    pub x: f64,
    pub samples: Vec<f64>,
}

impl SweepPoint {
    pub fn median(&self) -> f64 {
        let mut v = self.samples.clone();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if v.is_empty() {
            return f64::NAN;
        }
        let mid = v.len() / 2;
        if v.len() % 2 == 1 {
            v[mid]
        } else {
            0.5 * (v[mid - 1] + v[mid])
        }
    }

    pub fn min(&self) -> f64 {
        self.samples.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn point(&self, label: &str) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.label == label)
    }
}

fn check_accuracy(acc: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&acc) {
        return Err(Error::Invalid(format!("accuracy {acc} out of [0, 1]")));
    }
    Ok(acc)
}

/// Accuracy of a mapped network on the dataset's test split under the given
/// ADC mode and input keys.
pub fn evaluate_mapped(
    mapped: &Arc<MappedNet>,
    adc: &AdcMode,
    input_keys: Option<Vec<LayerKeys>>,
    dataset: &Dataset,
) -> Result<f64> {
    let mut exec = HwExec::new(mapped.clone(), adc, input_keys)?;
    check_accuracy(evaluate_with(&mapped.net, &mut exec, dataset)?)
}

/// Builds random layer keys for the given layers: `zeros` inserted rows per
/// 128-channel block and the chosen set of shuffled bit planes.
pub fn plan_keys(
    net: &NetworkSpec,
    layers: &[usize],
    zeros: usize,
    planes: &[u8],
    seed: u64,
) -> Result<Vec<LayerKeys>> {
    layers
        .iter()
        .map(|&l| {
            let spec = &net
                .layers
                .get(l)
                .ok_or_else(|| Error::Invalid(format!("layer {l} not in network")))?
                .spec;
            LayerKeys::random(l, spec.c_in, zeros, planes.to_vec(), derive_key(seed, &[l as u64]))
        })
        .collect()
}

/// The `top` most significant planes of a b-bit weight.
pub fn msb_planes(bits: u8, top: usize) -> Vec<u8> {
    (0..bits).rev().take(top).collect()
}

/// Conv layers eligible for shuffling: every conv layer except the first
/// (its input depth is the raw image, trivially guessable), and no
/// fully-connected layers (weight sharing there is too low to justify the
/// shuffle array).
pub fn eligible_shuffle_layers(net: &NetworkSpec) -> Vec<usize> {
    net.layers
        .iter()
        .enumerate()
        .filter(|(i, d)| *i > 0 && d.spec.kind == LayerKind::Conv)
        .map(|(i, _)| i)
        .collect()
}

/// Hybrid chip-bound retraining: forward passes run on the chip (quantized
/// weights, bit-serial tiles, the chip's ADC offsets), error and weight
/// updates stay in float, and every batch reprograms the array by exact
/// requantization. Returns the adapted model and the retrain curve of
/// hardware accuracy: index 0 is before retraining, then one point per
/// epoch.
pub fn retrain_on_chip(
    net: &NetworkSpec,
    model: &FloatModel,
    chip: &Arc<ChipFingerprint>,
    dataset: &Dataset,
    epochs: usize,
    hyper: HyperParams,
    seed: u64,
) -> Result<(FloatModel, Vec<f64>)> {
    let factory = HwFactory {
        mode: MappingMode::Conventional,
        weight_keys: None,
        input_keys: None,
        adc: AdcMode::Chip(chip.clone()),
        fake_seed: 0,
    };
    // validate geometry once so the per-batch factory cannot fail
    factory.try_make(net, model)?;

    let mut bound = model.clone();
    let mut curve = Vec::with_capacity(epochs + 1);
    let mut eval_exec = factory.try_make(net, &bound)?;
    curve.push(check_accuracy(evaluate_with(net, eval_exec.as_mut(), dataset)?)?);

    let mut sgd = SgdState::new(net);
    for epoch in 0..epochs {
        let epoch_seed = derive_key(seed, &[0x4e7a, epoch as u64]);
        run_epoch(net, &mut bound, &mut sgd, dataset, &factory, epoch_seed, &hyper)?;
        let mut exec = factory.try_make(net, &bound)?;
        curve.push(check_accuracy(evaluate_with(net, exec.as_mut(), dataset)?)?);
    }
    Ok((bound, curve))
}

/// Clone attack: reprogram the chip-bound weights onto every other chip in
/// the population and measure what the adversary actually gets.
pub fn clone_attack(
    net: &NetworkSpec,
    chip_bound_model: &FloatModel,
    population: &ChipPopulation,
    dataset: &Dataset,
) -> Result<SweepResult> {
    if population.seeds.len() < 2 {
        return Err(Error::Invalid("clone attack needs at least 2 chips".into()));
    }
    let mapped =
        Arc::new(map_network(net, chip_bound_model, MappingMode::Conventional, None, 0)?);
    let mut points = Vec::new();
    let mut clone_samples = Vec::new();
    for (i, &chip_seed) in population.seeds.iter().enumerate() {
        let fp = Arc::new(gen_fingerprint(chip_seed, &population.config, mapped.total_tiles));
        let acc = evaluate_mapped(&mapped, &AdcMode::Chip(fp), None, dataset)?;
        if i == population.victim {
            points.push(SweepPoint { label: "victim".into(), x: i as f64, samples: vec![acc] });
        } else {
            clone_samples.push(acc);
        }
    }
    points.push(SweepPoint { label: "clones".into(), x: -1.0, samples: clone_samples });
    Ok(SweepResult { axis: SweepAxis::Chips, points })
}

/// Random-key attack: the adversary runs the shuffled network with uniformly
/// drawn keys of the right shape. The true key is evaluated as the control.
pub fn random_key_attack(
    net: &NetworkSpec,
    model: &FloatModel,
    adc: &AdcMode,
    real_keys: &[LayerKeys],
    trials: usize,
    dataset: &Dataset,
    seed: u64,
) -> Result<SweepResult> {
    if real_keys.is_empty() {
        return Err(Error::Invalid("random-key attack needs at least one shuffled layer".into()));
    }
    let mapped = Arc::new(map_network(
        net,
        model,
        MappingMode::Conventional,
        Some(real_keys),
        derive_key(seed, &[0xfa6e]),
    )?);
    let baseline = evaluate_mapped(&mapped, adc, Some(real_keys.to_vec()), dataset)?;
    let mut points =
        vec![SweepPoint { label: "true-key".into(), x: -1.0, samples: vec![baseline] }];
    let mut samples = Vec::with_capacity(trials);
    for t in 0..trials {
        let adversary: Vec<LayerKeys> = real_keys
            .iter()
            .map(|lk| {
                let spec = &net.layers[lk.layer].spec;
                LayerKeys::random(
                    lk.layer,
                    spec.c_in,
                    lk.blocks[0].zeros,
                    lk.shuffled_planes.clone(),
                    derive_key(seed, &[0xad4e, t as u64, lk.layer as u64]),
                )
            })
            .collect::<Result<_>>()?;
        samples.push(evaluate_mapped(&mapped, adc, Some(adversary), dataset)?);
    }
    points.push(SweepPoint { label: "random-keys".into(), x: 0.0, samples });
    Ok(SweepResult { axis: SweepAxis::RandomKeys, points })
}

/// Knobs for the shuffle-configuration sweeps.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub trials_per_point: usize,
    pub zeros: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { trials_per_point: 10, zeros: 0, seed: 1 }
    }
}

/// Sweeps one shuffle-configuration axis and reports the adversary's
/// random-key accuracy distribution at each point (matched-digits sweeps
/// report accuracy per match count).
pub fn sweep_shuffle_config(
    net: &NetworkSpec,
    model: &FloatModel,
    axis: SweepAxis,
    cfg: &SweepConfig,
    dataset: &Dataset,
) -> Result<SweepResult> {
    let eligible = eligible_shuffle_layers(net);
    if eligible.is_empty() {
        return Err(Error::Invalid("network has no shuffle-eligible conv layers".into()));
    }
    let bits = net.layers[eligible[0]].spec.weight_bits;
    let all_planes: Vec<u8> = (0..bits).collect();
    let mut points = Vec::new();
    match axis {
        SweepAxis::LayerCount => {
            for count in 0..=eligible.len() {
                let layers = &eligible[..count];
                let samples = if layers.is_empty() {
                    // no shuffling: the adversary sees the undefended network
                    let mapped =
                        Arc::new(map_network(net, model, MappingMode::Conventional, None, 0)?);
                    vec![evaluate_mapped(&mapped, &AdcMode::Ideal, None, dataset)?]
                } else {
                    adversary_samples(net, model, layers, cfg.zeros, &all_planes, cfg, dataset)?
                };
                points.push(SweepPoint {
                    label: format!("{count}-layers"),
                    x: count as f64,
                    samples,
                });
            }
        }
        SweepAxis::LayerLocation => {
            for &l in &eligible {
                let samples =
                    adversary_samples(net, model, &[l], cfg.zeros, &all_planes, cfg, dataset)?;
                points.push(SweepPoint { label: format!("layer-{l}"), x: l as f64, samples });
            }
        }
        SweepAxis::BitPlanes => {
            let layer = eligible[0];
            for top in 1..=bits as usize {
                let planes = msb_planes(bits, top);
                let samples =
                    adversary_samples(net, model, &[layer], cfg.zeros, &planes, cfg, dataset)?;
                points.push(SweepPoint {
                    label: format!("top-{top}-planes"),
                    x: top as f64,
                    samples,
                });
            }
        }
        SweepAxis::MatchedDigits => {
            let layer = eligible[0];
            let real = plan_keys(net, &[layer], cfg.zeros, &all_planes, cfg.seed)?;
            if real[0].blocks.len() != 1 {
                return Err(Error::Invalid(
                    "matched-digits sweep needs a single-block layer (C_in <= 128)".into(),
                ));
            }
            let n_real = real[0].blocks[0].n_real;
            let mapped = Arc::new(map_network(
                net,
                model,
                MappingMode::Conventional,
                Some(&real),
                derive_key(cfg.seed, &[0xfa6e]),
            )?);
            let grid: Vec<usize> = matched_digit_grid(n_real);
            for n in grid {
                let mut samples = Vec::new();
                for t in 0..cfg.trials_per_point {
                    let key = key_with_matches(
                        &real[0].blocks[0],
                        n,
                        derive_key(cfg.seed, &[0x6e4d, n as u64, t as u64]),
                    )?;
                    let adversary = vec![LayerKeys {
                        layer,
                        blocks: vec![key],
                        shuffled_planes: real[0].shuffled_planes.clone(),
                    }];
                    samples.push(evaluate_mapped(
                        &mapped,
                        &AdcMode::Ideal,
                        Some(adversary),
                        dataset,
                    )?);
                    if n == n_real {
                        break; // the full-match key is unique
                    }
                }
                points.push(SweepPoint { label: format!("n-{n}"), x: n as f64, samples });
            }
        }
        other => {
            return Err(Error::Invalid(format!(
                "axis {} is not a shuffle-configuration sweep",
                other.name()
            )))
        }
    }
    Ok(SweepResult { axis, points })
}

fn matched_digit_grid(n_real: usize) -> Vec<usize> {
    let mut grid: Vec<usize> = (0..=n_real).step_by((n_real / 8).max(1)).collect();
    if *grid.last().unwrap() != n_real {
        grid.push(n_real);
    }
    grid
}

fn adversary_samples(
    net: &NetworkSpec,
    model: &FloatModel,
    layers: &[usize],
    zeros: usize,
    planes: &[u8],
    cfg: &SweepConfig,
    dataset: &Dataset,
) -> Result<Vec<f64>> {
    let real = plan_keys(net, layers, zeros, planes, cfg.seed)?;
    let result = random_key_attack(
        net,
        model,
        &AdcMode::Ideal,
        &real,
        cfg.trials_per_point,
        dataset,
        derive_key(cfg.seed, &[0xa77c, layers.len() as u64, planes.len() as u64]),
    )?;
    Ok(result.point("random-keys").unwrap().samples.clone())
}

/// One cell of the offset-sensitivity study.
#[derive(Debug, Clone)]
pub struct OffsetCell {
    pub label: String,
    pub kind: AdcKind,
    pub wl_label: String,
    pub weight_bits: u8,
}

/// Accuracy of the un-retrained model under ADC offsets, per cell: one
/// ideal-ADC baseline point and one chip-accuracy distribution point per
/// cell, over `chips` fresh chip instances each.
pub fn offset_sensitivity(
    net: &NetworkSpec,
    model: &FloatModel,
    cells: &[OffsetCell],
    chips: usize,
    dataset: &Dataset,
    seed: u64,
) -> Result<SweepResult> {
    let mut points = Vec::new();
    for (ci, cell) in cells.iter().enumerate() {
        let mut cell_net = net.clone();
        for def in &mut cell_net.layers {
            def.spec.weight_bits = cell.weight_bits;
        }
        cell_net.validate()?;
        let mapped = Arc::new(map_network(&cell_net, model, MappingMode::Conventional, None, 0)?);
        let ideal = evaluate_mapped(&mapped, &AdcMode::Ideal, None, dataset)?;
        points.push(SweepPoint {
            label: format!("{}-ideal", cell.label),
            x: ci as f64,
            samples: vec![ideal],
        });
        let config = AdcConfig::preset(cell.kind, &cell.wl_label)?;
        let mut samples = Vec::with_capacity(chips);
        for c in 0..chips {
            let chip_seed = derive_key(seed, &[0x0ff5, ci as u64, c as u64]);
            let fp = Arc::new(gen_fingerprint(chip_seed, &config, mapped.total_tiles));
            samples.push(evaluate_mapped(&mapped, &AdcMode::Chip(fp), None, dataset)?);
        }
        points.push(SweepPoint { label: cell.label.clone(), x: ci as f64, samples });
    }
    Ok(SweepResult { axis: SweepAxis::OffsetCells, points })
}
