//! Parameter checkpoints as flat text.
//!
//! ```text
//! ppn-checkpoint 1
//! env pointmass2d
//! total_steps 20480
//! dims 4 2 128
//! tensor encoder.0.w 4 128
//! <row 0 values, space separated>
//! ...
//! tensor encoder.0.b 1 128
//! ...
//! ```
//!
//! Tensors appear in [`PPNParams::tensor_names`] order. Values use Rust's
//! shortest round-trip formatting, so save/load is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::model::{Dims, PPNParams};

const MAGIC: &str = "ppn-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub env: String,
    /// Environment samples seen when the checkpoint was written.
    pub total_steps: u64,
    pub params: PPNParams,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let d = self.params.dims();
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC} {VERSION}");
        let _ = writeln!(out, "env {}", self.env);
        let _ = writeln!(out, "total_steps {}", self.total_steps);
        let _ = writeln!(out, "dims {} {} {}", d.obs, d.act, d.hidden);
        for (name, t) in PPNParams::tensor_names().iter().zip(self.params.tensors()) {
            let _ = writeln!(out, "tensor {name} {} {}", t.rows(), t.cols());
            for r in 0..t.rows() {
                let row: Vec<String> = t.row_slice(r).iter().map(f64::to_string).collect();
                out.push_str(&row.join(" "));
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| -> std::result::Result<(usize, Vec<&str>), String> {
            let (i, l) = lines.next().ok_or_else(|| format!("unexpected end of file, expected {what}"))?;
            Ok((i + 1, l.split_whitespace().collect()))
        };
        let (_, head) = next("header")?;
        if head.len() != 2 || head[0] != MAGIC {
            return Err("not a ppn checkpoint".into());
        }
        if head[1] != VERSION.to_string() {
            return Err(format!("unsupported checkpoint version {}", head[1]));
        }
        let field = |parts: &[&str], line: usize, key: &str, n: usize| -> std::result::Result<(), String> {
            if parts.first() != Some(&key) || parts.len() != n + 1 {
                return Err(format!("line {line}: expected `{key}` with {n} value(s)"));
            }
            Ok(())
        };
        let (ln, env) = next("env")?;
        field(&env, ln, "env", 1)?;
        let (ln, steps) = next("total_steps")?;
        field(&steps, ln, "total_steps", 1)?;
        let total_steps = steps[1].parse().map_err(|_| format!("line {ln}: bad total_steps"))?;
        let (ln, dims) = next("dims")?;
        field(&dims, ln, "dims", 3)?;
        let num = |s: &str| s.parse::<usize>().map_err(|_| format!("line {ln}: bad dimension `{s}`"));
        let dims = Dims {
            obs: num(dims[1])?,
            act: num(dims[2])?,
            hidden: num(dims[3])?,
        };
        let mut params = PPNParams::zeros(dims);
        for (name, slot) in PPNParams::tensor_names().iter().zip(params.tensors_mut()) {
            let (ln, head) = next("tensor header")?;
            field(&head, ln, "tensor", 3)?;
            if head[1] != *name {
                return Err(format!("line {ln}: expected tensor {name}, found {}", head[1]));
            }
            let shape = (num(head[2])?, num(head[3])?);
            if shape != slot.shape() {
                return Err(format!(
                    "line {ln}: tensor {name} is {}x{}, dims imply {}x{}",
                    shape.0,
                    shape.1,
                    slot.rows(),
                    slot.cols()
                ));
            }
            let mut data = Vec::with_capacity(slot.len());
            for _ in 0..shape.0 {
                let (ln, row) = next("tensor row")?;
                if row.len() != shape.1 {
                    return Err(format!("line {ln}: expected {} values, found {}", shape.1, row.len()));
                }
                for v in row {
                    data.push(v.parse::<f64>().map_err(|_| format!("line {ln}: bad value `{v}`"))?);
                }
            }
            *slot = Tensor::new(shape.0, shape.1, data).map_err(|e| e.to_string())?;
        }
        Ok(Self {
            env: env[1].to_string(),
            total_steps,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|message| Error::Checkpoint {
            path: path.to_path_buf(),
            message,
        })
    }
}
