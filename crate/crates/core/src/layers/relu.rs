use crate::error::Result;
use crate::gyro::{raw, BallTensor, Curvature};
use crate::tape::{NodeId, Tape};

impl Tape {
    /// `exp0 . ReLU . log0`
    pub fn relu_p(&mut self, x: NodeId, c: Curvature) -> Result<NodeId> {
        let v = self.log0(x, c)?;
        let v = self.relu(v)?;
        self.exp0(v, c)
    }
}

pub fn relu_p(x: &BallTensor) -> BallTensor {
    let c = x.curvature();
    let v = raw::log0(x.coords(), c).map(|a| a.max(0.0));
    BallTensor::from_raw(raw::project(&raw::exp0(&v, c), c), c)
}
