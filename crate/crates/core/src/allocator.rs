//! Bit-width allocation: per-layer sensitivity scores and a target
//! compression rate in, a [`BitAssignment`] out.
//!
//! Greedy ladder: every layer starts at its menu minimum; the highest-scoring
//! layer whose next menu step still fits the budget is upgraded, and the scan
//! restarts. Ties on score go to the smaller layer, then the shallower one.
//! A layer never climbs above a strictly higher-scoring layer of the same
//! class, which keeps bits score-monotone within each class.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantsim::{compression_ratio, BitAssignment, BitMenus};
use crate::smallnet::{LayerClass, LayerMeta};

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationRequest {
    pub scores: Vec<f64>,
    /// Minimum parameter compression ratio ζ, as a fraction.
    pub target_compression: f64,
    pub menus: BitMenus,
    pub activation_bits: u32,
}

impl AllocationRequest {
    pub fn new(scores: Vec<f64>, target_compression: f64) -> Self {
        AllocationRequest {
            scores,
            target_compression,
            menus: BitMenus::default(),
            activation_bits: 8,
        }
    }
}

fn menus_for<'a>(menus: &'a BitMenus, inventory: &[LayerMeta]) -> Result<Vec<&'a [u32]>> {
    inventory
        .iter()
        .map(|m| {
            let menu = menus.menu(m.layer_class);
            if menu.is_empty() {
                Err(Error::Precondition(format!("layer {} has no bit menu", m.depth)))
            } else {
                Ok(menu)
            }
        })
        .collect()
}

/// Compression reached when every layer sits at its menu minimum.
pub fn max_compression(inventory: &[LayerMeta], menus: &BitMenus) -> Result<f64> {
    let mins: Vec<u32> = menus_for(menus, inventory)?.iter().map(|m| m[0]).collect();
    Ok(compression_ratio(inventory, &mins))
}

pub fn allocate(req: &AllocationRequest, inventory: &[LayerMeta]) -> Result<BitAssignment> {
    let layers = inventory.len();
    if layers == 0 {
        return Err(Error::NoParameterizedLayers);
    }
    if req.scores.len() != layers {
        return Err(Error::LengthMismatch {
            expected: layers,
            got: req.scores.len(),
        });
    }
    if req.scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("allocation scores".into()));
    }
    let zeta = req.target_compression;
    if !(0.0..1.0).contains(&zeta) {
        return Err(Error::Precondition(format!("target compression {zeta} outside [0, 1)")));
    }
    req.menus.validate()?;
    let menus = menus_for(&req.menus, inventory)?;

    let mut level = vec![0usize; layers];
    let mut bits: Vec<u32> = menus.iter().map(|m| m[0]).collect();
    let floor = compression_ratio(inventory, &bits);
    if floor < zeta {
        return Err(Error::Infeasible {
            target: zeta,
            achievable: floor,
        });
    }

    let mut order: Vec<usize> = (0..layers).collect();
    order.sort_by(|&a, &b| {
        req.scores[b]
            .partial_cmp(&req.scores[a])
            .unwrap_or(Ordering::Equal)
            .then(inventory[a].param_count.cmp(&inventory[b].param_count))
            .then(inventory[a].depth.cmp(&inventory[b].depth))
    });

    'ladder: loop {
        for &i in &order {
            if level[i] + 1 >= menus[i].len() {
                continue;
            }
            let next = menus[i][level[i] + 1];
            let blocked = (0..layers).any(|j| {
                inventory[j].layer_class == inventory[i].layer_class && req.scores[j] > req.scores[i] && bits[j] < next
            });
            if blocked {
                continue;
            }
            let previous = bits[i];
            bits[i] = next;
            if compression_ratio(inventory, &bits) >= zeta {
                level[i] += 1;
                continue 'ladder;
            }
            bits[i] = previous;
        }
        break;
    }

    Ok(BitAssignment {
        activation_bits: req.activation_bits,
        weight_bits: bits,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    Length {
        expected: usize,
        got: usize,
    },
    Menu {
        depth: usize,
        bits: u32,
        layer_class: LayerClass,
    },
    ActivationBits {
        bits: u32,
    },
    Compression {
        achieved: f64,
        target: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Length { expected, got } => write!(f, "assignment has {got} layers, model has {expected}"),
            Violation::Menu {
                depth,
                bits,
                layer_class,
            } => write!(f, "layer {depth}: {bits} bits not in the {layer_class:?} menu"),
            Violation::ActivationBits { bits } => write!(f, "activation bits {bits} < 2"),
            Violation::Compression { achieved, target } => {
                write!(f, "compression {achieved:.6} below target {target:.6}")
            }
        }
    }
}

/// Every way `assignment` breaks the menu, length or budget contract.
/// An empty report means the assignment is valid.
pub fn validate_assignment(
    assignment: &BitAssignment,
    inventory: &[LayerMeta],
    menus: &BitMenus,
    target_compression: f64,
) -> Vec<Violation> {
    let mut report = Vec::new();
    if assignment.len() != inventory.len() {
        report.push(Violation::Length {
            expected: inventory.len(),
            got: assignment.len(),
        });
    }
    for (meta, &bits) in inventory.iter().zip(&assignment.weight_bits) {
        if !menus.menu(meta.layer_class).contains(&bits) {
            report.push(Violation::Menu {
                depth: meta.depth,
                bits,
                layer_class: meta.layer_class,
            });
        }
    }
    if assignment.activation_bits < 2 {
        report.push(Violation::ActivationBits {
            bits: assignment.activation_bits,
        });
    }
    if assignment.len() == inventory.len() {
        let achieved = compression_ratio(inventory, &assignment.weight_bits);
        if achieved < target_compression {
            report.push(Violation::Compression {
                achieved,
                target: target_compression,
            });
        }
    }
    report
}
