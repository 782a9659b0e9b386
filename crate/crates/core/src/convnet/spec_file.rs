//! Plain-text network description.
//!
//! One layer per line after an `input C H W` line; `#` starts a comment.
//!
//! ```text
//! input 1 32 32
//! conv 4 5 2 2        # kernels, kernel size, stride, padding (or: conv K KH KW S P)
//! relu
//! maxpool 4 4         # window, stride
//! norm 5 2 1e-4 0.75  # n, k, alpha, beta (all optional)
//! fc 10
//! softmax
//! ```

use super::{LayerSpec, LrnParams};
use crate::error::{Error, Result};

pub fn parse_network_spec(text: &str) -> Result<([usize; 3], Vec<LayerSpec>)> {
    let mut input = None;
    let mut specs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Format(format!("line {}: {msg}: `{line}`", lineno + 1));
        let mut parts = line.split_whitespace();
        let kind = parts.next().expect("nonempty line");
        let args: Vec<&str> = parts.collect();
        let ints = || -> Result<Vec<usize>> {
            args.iter()
                .map(|a| a.parse::<usize>().map_err(|_| bad("expected integer arguments")))
                .collect()
        };
        match kind {
            "input" => {
                let v = ints()?;
                if v.len() != 3 || input.is_some() {
                    return Err(bad("`input` takes C H W and appears once"));
                }
                input = Some([v[0], v[1], v[2]]);
            }
            "conv" => {
                let v = ints()?;
                let spec = match v[..] {
                    [k, ks, s, p] => LayerSpec::conv(k, ks, s, p),
                    [k, kh, kw, s, p] => LayerSpec::Convolution {
                        kernels: k,
                        kernel_h: kh,
                        kernel_w: kw,
                        stride: s,
                        padding: p,
                    },
                    _ => return Err(bad("`conv` takes K KS S P or K KH KW S P")),
                };
                specs.push(spec);
            }
            "relu" if args.is_empty() => specs.push(LayerSpec::Rectifier),
            "softmax" if args.is_empty() => specs.push(LayerSpec::Softmax),
            "maxpool" => match ints()?.as_slice() {
                &[w, s] => specs.push(LayerSpec::maxpool(w, s)),
                _ => return Err(bad("`maxpool` takes WINDOW STRIDE")),
            },
            "fc" => match ints()?.as_slice() {
                &[o] => specs.push(LayerSpec::fc(o)),
                _ => return Err(bad("`fc` takes OUTPUTS")),
            },
            "norm" => {
                if args.len() > 4 {
                    return Err(bad("`norm` takes at most N K ALPHA BETA"));
                }
                let mut p = LrnParams::default();
                if let Some(n) = args.first() {
                    p.size = n.parse().map_err(|_| bad("bad window"))?;
                }
                let floats: Vec<f64> = args
                    .iter()
                    .skip(1)
                    .map(|a| a.parse::<f64>().map_err(|_| bad("bad constant")))
                    .collect::<Result<_>>()?;
                if let Some(&k) = floats.first() {
                    p.k = k;
                }
                if let Some(&a) = floats.get(1) {
                    p.alpha = a;
                }
                if let Some(&b) = floats.get(2) {
                    p.beta = b;
                }
                specs.push(LayerSpec::CrossChannelNorm(p));
            }
            _ => return Err(bad("unknown layer kind")),
        }
    }
    let input = input.ok_or_else(|| Error::Format("missing `input C H W` line".into()))?;
    Ok((input, specs))
}

pub fn format_network_spec(input: [usize; 3], specs: &[LayerSpec]) -> String {
    let mut out = format!("input {} {} {}\n", input[0], input[1], input[2]);
    for spec in specs {
        let line = match spec {
            LayerSpec::Convolution {
                kernels,
                kernel_h,
                kernel_w,
                stride,
                padding,
            } => format!("conv {kernels} {kernel_h} {kernel_w} {stride} {padding}"),
            LayerSpec::Rectifier => "relu".into(),
            LayerSpec::MaxPool { window, stride } => format!("maxpool {window} {stride}"),
            LayerSpec::CrossChannelNorm(p) => {
                format!("norm {} {:?} {:?} {:?}", p.size, p.k, p.alpha, p.beta)
            }
            LayerSpec::FullyConnected { outputs } => format!("fc {outputs}"),
            LayerSpec::Softmax => "softmax".into(),
        };
        out.push_str(&line);
        out.push('\n');
    }
    out
}
