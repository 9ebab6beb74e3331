use std::fmt;
use std::sync::Arc;

use crate::graph::DirectedGraph;
use crate::optim::{project_origin_ball, ConstraintSet};
use crate::{Point, Result};

/// What a malicious sender hands one receiver in one step: a state value
/// and an already-weighted tracking share.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackMessage {
    pub z: Point,
    pub share: Point,
}

pub type AttackFn = dyn Fn(usize, usize, usize) -> AttackMessage + Send + Sync;

#[derive(Clone)]
pub enum AttackModel {
    /// Every component is `±magnitude`, pointing away from the optimum.
    SignedExtreme { magnitude: f64 },
    /// A fixed value sent as both state and tracking share.
    ExtremeConstant(Point),
    /// A fixed tracking share; the state sent is the origin.
    GradientPoison(Point),
    /// `(step, sender, receiver) -> message`.
    Custom(Arc<AttackFn>),
}

impl fmt::Debug for AttackModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttackModel::SignedExtreme { magnitude } => write!(f, "SignedExtreme({magnitude})"),
            AttackModel::ExtremeConstant(v) => write!(f, "ExtremeConstant({:?})", v.as_slice()),
            AttackModel::GradientPoison(v) => write!(f, "GradientPoison({:?})", v.as_slice()),
            AttackModel::Custom(_) => f.write_str("Custom"),
        }
    }
}

/// Step-dependent data an attack needs. Values are clipped to what the
/// receiver would accept: `z` into `x_set`, the share into the ball of
/// radius `s_radius` when given.
pub struct AttackContext<'a> {
    pub step: usize,
    pub x_star: &'a Point,
    pub x_set: &'a ConstraintSet,
    pub s_radius: Option<f64>,
}

impl AttackModel {
    fn raw(&self, ctx: &AttackContext<'_>, sender: usize, receiver: usize) -> AttackMessage {
        match self {
            AttackModel::SignedExtreme { magnitude } => {
                let v = ctx.x_star.map(|c| if c > 0.0 { -magnitude } else { *magnitude });
                AttackMessage { z: v.clone(), share: v }
            }
            AttackModel::ExtremeConstant(v) => AttackMessage {
                z: v.clone(),
                share: v.clone(),
            },
            AttackModel::GradientPoison(v) => AttackMessage {
                z: Point::zeros(v.len()),
                share: v.clone(),
            },
            AttackModel::Custom(f) => f(ctx.step, sender, receiver),
        }
    }

    /// One message per (malicious in-neighbor, legitimate receiver) edge.
    pub fn messages(&self, g: &DirectedGraph, ctx: &AttackContext<'_>) -> Result<Messages> {
        let mut out = Messages::empty(g);
        for (p, &i) in g.legitimate().iter().enumerate() {
            for &j in g.in_neighbors(i).iter().filter(|&&j| !g.is_legitimate(j)) {
                let mut m = self.raw(ctx, j, i);
                m.z = ctx.x_set.project(&m.z)?;
                if let Some(r) = ctx.s_radius {
                    m.share = project_origin_ball(&m.share, r);
                }
                out.by_receiver[p].push((j, m));
            }
        }
        Ok(out)
    }
}

/// Messages from malicious senders, grouped by legitimate receiver.
#[derive(Clone, Debug, Default)]
pub struct Messages {
    by_receiver: Vec<Vec<(usize, AttackMessage)>>,
}

impl Messages {
    pub fn empty(g: &DirectedGraph) -> Self {
        Self {
            by_receiver: vec![Vec::new(); g.n_legitimate()],
        }
    }

    pub fn insert(&mut self, g: &DirectedGraph, receiver: usize, sender: usize, msg: AttackMessage) {
        if let Some(p) = g.legit_position(receiver) {
            let list = &mut self.by_receiver[p];
            list.retain(|(s, _)| *s != sender);
            list.push((sender, msg));
        }
    }

    pub fn get(&self, g: &DirectedGraph, receiver: usize, sender: usize) -> Option<&AttackMessage> {
        let p = g.legit_position(receiver)?;
        self.by_receiver[p].iter().find(|(s, _)| *s == sender).map(|(_, m)| m)
    }

    pub fn len(&self) -> usize {
        self.by_receiver.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
