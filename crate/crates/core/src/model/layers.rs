//! Convolutional building blocks. Each layer owns parameter ids only; values
//! come from the [`Bound`] store passed to `forward`.

use super::params::{Bound, Initializer, ParamId};
use crate::error::Result;
use crate::tensor::{Scalar, Shape, Tape, Var};

/// Epsilon of the half-instance normalization.
pub const HIN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub padding: usize,
}

impl Conv {
    pub fn new<T: Scalar>(
        init: &mut Initializer<'_, T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
    ) -> Self {
        Self::scaled(init, name, cin, cout, k, 1.0)
    }

    pub fn scaled<T: Scalar>(
        init: &mut Initializer<'_, T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        scale: f64,
    ) -> Self {
        let weight = init.uniform(
            format!("{name}.weight"),
            Shape::new(cout, cin, k, k),
            cin * k * k,
            scale,
        );
        let bias = init.zeros(format!("{name}.bias"), Shape::new(1, cout, 1, 1));
        Conv {
            weight,
            bias,
            padding: k / 2,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        tape.conv2d(
            x,
            p.var(self.weight),
            Some(p.var(self.bias)),
            1,
            self.padding,
        )
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar>(
        init: &mut Initializer<'_, T>,
        name: &str,
        fin: usize,
        fout: usize,
    ) -> Self {
        let weight = init.uniform(
            format!("{name}.weight"),
            Shape::new(fout, fin, 1, 1),
            fin,
            1.0,
        );
        let bias = init.zeros(format!("{name}.bias"), Shape::new(1, fout, 1, 1));
        Linear { weight, bias }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        tape.fully_connected(x, p.var(self.weight), Some(p.var(self.bias)))
    }
}

/// Anything a mixture-of-experts bank can route to.
pub trait Expert {
    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var>;
}

/// `x + conv(relu(conv(x)))`.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub conv1: Conv,
    pub conv2: Conv,
}

impl ResBlock {
    pub fn new<T: Scalar>(init: &mut Initializer<'_, T>, name: &str, channels: usize) -> Self {
        ResBlock {
            conv1: Conv::new(init, &format!("{name}.conv1"), channels, channels, 3),
            conv2: Conv::new(init, &format!("{name}.conv2"), channels, channels, 3),
        }
    }
}

impl Expert for ResBlock {
    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let h = self.conv1.forward(tape, p, x)?;
        let h = tape.relu(h)?;
        let h = self.conv2.forward(tape, p, h)?;
        tape.add(x, h)
    }
}

/// Half-instance-normalization block: conv, instance-normalize the first
/// half of the channels, ReLU, conv, residual.
#[derive(Clone, Debug)]
pub struct HinBlock {
    pub conv1: Conv,
    pub conv2: Conv,
    pub channels: usize,
}

impl HinBlock {
    pub fn new<T: Scalar>(init: &mut Initializer<'_, T>, name: &str, channels: usize) -> Self {
        HinBlock {
            conv1: Conv::new(init, &format!("{name}.conv1"), channels, channels, 3),
            conv2: Conv::new(init, &format!("{name}.conv2"), channels, channels, 3),
            channels,
        }
    }
}

impl Expert for HinBlock {
    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let h = self.conv1.forward(tape, p, x)?;
        let half = self.channels / 2;
        let h = if half > 0 {
            let parts = tape.split_channels(h, &[half, self.channels - half])?;
            let normed = tape.instance_norm(parts[0], HIN_EPS)?;
            tape.concat_channels(&[normed, parts[1]])?
        } else {
            h
        };
        let h = tape.relu(h)?;
        let h = self.conv2.forward(tape, p, h)?;
        tape.add(x, h)
    }
}

/// Low-frequency expert: `relu(conv3x3(x))`.
#[derive(Clone, Debug)]
pub struct ConvExpert {
    pub conv: Conv,
}

impl ConvExpert {
    pub fn new<T: Scalar>(init: &mut Initializer<'_, T>, name: &str, channels: usize) -> Self {
        ConvExpert {
            conv: Conv::new(init, &format!("{name}.conv"), channels, channels, 3),
        }
    }
}

impl Expert for ConvExpert {
    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let h = self.conv.forward(tape, p, x)?;
        tape.relu(h)
    }
}

/// Fusion expert: `conv3x3(relu(conv3x3(x)))`, narrowing `cin` to `cout`.
#[derive(Clone, Debug)]
pub struct FusionExpert {
    pub conv1: Conv,
    pub conv2: Conv,
}

impl FusionExpert {
    pub fn new<T: Scalar>(
        init: &mut Initializer<'_, T>,
        name: &str,
        cin: usize,
        cout: usize,
    ) -> Self {
        FusionExpert {
            conv1: Conv::new(init, &format!("{name}.conv1"), cin, cout, 3),
            conv2: Conv::new(init, &format!("{name}.conv2"), cout, cout, 3),
        }
    }

    pub fn param_count(cin: usize, cout: usize) -> usize {
        cin * cout * 9 + cout + cout * cout * 9 + cout
    }
}

impl Expert for FusionExpert {
    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let h = self.conv1.forward(tape, p, x)?;
        let h = tape.relu(h)?;
        self.conv2.forward(tape, p, h)
    }
}

/// Residual block replacing the experts mixture in the ablation:
/// `skip(x) + conv3x3(relu(conv3x3(x)))` with a 1×1 projection on the skip.
#[derive(Clone, Debug)]
pub struct WideResBlock {
    pub conv1: Conv,
    pub conv2: Conv,
    pub skip: Conv,
    pub hidden: usize,
}

impl WideResBlock {
    pub fn new<T: Scalar>(
        init: &mut Initializer<'_, T>,
        name: &str,
        cin: usize,
        hidden: usize,
        cout: usize,
    ) -> Self {
        WideResBlock {
            conv1: Conv::new(init, &format!("{name}.conv1"), cin, hidden, 3),
            conv2: Conv::new(init, &format!("{name}.conv2"), hidden, cout, 3),
            skip: Conv::new(init, &format!("{name}.skip"), cin, cout, 1),
            hidden,
        }
    }

    pub fn param_count(cin: usize, hidden: usize, cout: usize) -> usize {
        cin * hidden * 9 + hidden + hidden * cout * 9 + cout + cin * cout + cout
    }

    /// Hidden width whose parameter count is closest to `target`.
    pub fn matching_hidden(cin: usize, cout: usize, target: usize) -> usize {
        (1..=4 * target.max(1))
            .min_by_key(|&h| Self::param_count(cin, h, cout).abs_diff(target))
            .unwrap_or(1)
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let h = self.conv1.forward(tape, p, x)?;
        let h = tape.relu(h)?;
        let h = self.conv2.forward(tape, p, h)?;
        let s = self.skip.forward(tape, p, x)?;
        tape.add(s, h)
    }
}
