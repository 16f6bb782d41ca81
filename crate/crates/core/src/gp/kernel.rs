//! Covariance kernels over time (in weeks): five primitives plus sum and
//! product composition, with analytic hyperparameter gradients.
//!
//! All free hyperparameters are positive. The periodic period is fixed to
//! 52 weeks and the linear kernel's center is pinned to the training-time
//! mean; neither is optimized.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// One year expressed on the weekly grid.
pub const PERIOD_WEEKS: f64 = 52.0;

#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    /// `sigma^2 (t - c)(u - c)` with `c` fixed to the training-time mean.
    Linear { signal_std: f64, center: f64 },
    /// `sigma^2 exp(-0.5 |t-u|^2 / l^2)`
    Rbf { signal_std: f64, length_scale: f64 },
    /// `sigma^2 exp(-2 sin^2(pi |t-u| / p) / l^2)` with fixed period `p`.
    Periodic {
        signal_std: f64,
        length_scale: f64,
        period: f64,
    },
    /// `sigma^2 (1 + |t-u|^2 / (2 alpha l^2))^-alpha`
    RationalQuadratic {
        signal_std: f64,
        length_scale: f64,
        alpha: f64,
    },
    /// Matern with smoothness 3/2.
    Matern32 { signal_std: f64, length_scale: f64 },
    /// Matern with smoothness 5/2.
    Matern52 { signal_std: f64, length_scale: f64 },
    Sum(Box<Kernel>, Box<Kernel>),
    Product(Box<Kernel>, Box<Kernel>),
}

impl Kernel {
    pub fn linear() -> Self {
        Kernel::Linear {
            signal_std: 1.0,
            center: 0.0,
        }
    }

    pub fn rbf() -> Self {
        Kernel::Rbf {
            signal_std: 1.0,
            length_scale: 8.0,
        }
    }

    pub fn periodic() -> Self {
        Kernel::Periodic {
            signal_std: 1.0,
            length_scale: 8.0,
            period: PERIOD_WEEKS,
        }
    }

    pub fn rational_quadratic() -> Self {
        Kernel::RationalQuadratic {
            signal_std: 1.0,
            length_scale: 8.0,
            alpha: 1.0,
        }
    }

    pub fn matern32() -> Self {
        Kernel::Matern32 {
            signal_std: 1.0,
            length_scale: 8.0,
        }
    }

    pub fn matern52() -> Self {
        Kernel::Matern52 {
            signal_std: 1.0,
            length_scale: 8.0,
        }
    }

    pub fn sum(a: Kernel, b: Kernel) -> Self {
        Kernel::Sum(Box::new(a), Box::new(b))
    }

    pub fn product(a: Kernel, b: Kernel) -> Self {
        Kernel::Product(Box::new(a), Box::new(b))
    }

    /// Number of free (optimized) hyperparameters.
    pub fn param_count(&self) -> usize {
        match self {
            Kernel::Linear { .. } => 1,
            Kernel::Rbf { .. } | Kernel::Periodic { .. } => 2,
            Kernel::RationalQuadratic { .. } => 3,
            Kernel::Matern32 { .. } | Kernel::Matern52 { .. } => 2,
            Kernel::Sum(a, b) | Kernel::Product(a, b) => a.param_count() + b.param_count(),
        }
    }

    /// Free hyperparameters in natural units, depth-first.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.collect_params(&mut out);
        out
    }

    fn collect_params(&self, out: &mut Vec<f64>) {
        match self {
            Kernel::Linear { signal_std, .. } => out.push(*signal_std),
            Kernel::Rbf {
                signal_std,
                length_scale,
            }
            | Kernel::Matern32 {
                signal_std,
                length_scale,
            }
            | Kernel::Matern52 {
                signal_std,
                length_scale,
            }
            | Kernel::Periodic {
                signal_std,
                length_scale,
                ..
            } => {
                out.push(*signal_std);
                out.push(*length_scale);
            }
            Kernel::RationalQuadratic {
                signal_std,
                length_scale,
                alpha,
            } => {
                out.push(*signal_std);
                out.push(*length_scale);
                out.push(*alpha);
            }
            Kernel::Sum(a, b) | Kernel::Product(a, b) => {
                a.collect_params(out);
                b.collect_params(out);
            }
        }
    }

    pub fn set_params(&mut self, params: &[f64]) {
        let mut offset = 0;
        self.assign_params(params, &mut offset);
        debug_assert_eq!(offset, params.len());
    }

    fn assign_params(&mut self, params: &[f64], offset: &mut usize) {
        let mut next = || {
            let v = params[*offset];
            *offset += 1;
            v
        };
        match self {
            Kernel::Linear { signal_std, .. } => *signal_std = next(),
            Kernel::Rbf {
                signal_std,
                length_scale,
            }
            | Kernel::Matern32 {
                signal_std,
                length_scale,
            }
            | Kernel::Matern52 {
                signal_std,
                length_scale,
            }
            | Kernel::Periodic {
                signal_std,
                length_scale,
                ..
            } => {
                *signal_std = next();
                *length_scale = next();
            }
            Kernel::RationalQuadratic {
                signal_std,
                length_scale,
                alpha,
            } => {
                *signal_std = next();
                *length_scale = next();
                *alpha = next();
            }
            Kernel::Sum(a, b) | Kernel::Product(a, b) => {
                a.assign_params(params, offset);
                b.assign_params(params, offset);
            }
        }
    }

    /// Stable names for the free parameters, prefixed by primitive ordinal.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        let mut ordinal = 0;
        self.collect_names(&mut names, &mut ordinal);
        names
    }

    fn collect_names(&self, names: &mut Vec<String>, ordinal: &mut usize) {
        let prim = |names: &mut Vec<String>, ordinal: &mut usize, tag: &str, fields: &[&str]| {
            for f in fields {
                names.push(format!("p{ordinal}.{tag}.{f}"));
            }
            *ordinal += 1;
        };
        match self {
            Kernel::Linear { .. } => prim(names, ordinal, "linear", &["signal_std"]),
            Kernel::Rbf { .. } => prim(names, ordinal, "rbf", &["signal_std", "length_scale"]),
            Kernel::Periodic { .. } => {
                prim(names, ordinal, "periodic", &["signal_std", "length_scale"])
            }
            Kernel::RationalQuadratic { .. } => prim(
                names,
                ordinal,
                "rq",
                &["signal_std", "length_scale", "alpha"],
            ),
            Kernel::Matern32 { .. } => {
                prim(names, ordinal, "matern32", &["signal_std", "length_scale"])
            }
            Kernel::Matern52 { .. } => {
                prim(names, ordinal, "matern52", &["signal_std", "length_scale"])
            }
            Kernel::Sum(a, b) | Kernel::Product(a, b) => {
                a.collect_names(names, ordinal);
                b.collect_names(names, ordinal);
            }
        }
    }

    /// Pins every linear primitive's center to the mean of `times`.
    pub fn set_linear_centers(&mut self, times: &[f64]) {
        let center = if times.is_empty() {
            0.0
        } else {
            times.iter().sum::<f64>() / times.len() as f64
        };
        self.set_centers_rec(center);
    }

    fn set_centers_rec(&mut self, value: f64) {
        match self {
            Kernel::Linear { center, .. } => *center = value,
            Kernel::Sum(a, b) | Kernel::Product(a, b) => {
                a.set_centers_rec(value);
                b.set_centers_rec(value);
            }
            _ => {}
        }
    }

    pub fn eval(&self, t: f64, u: f64) -> f64 {
        match self {
            Kernel::Linear { signal_std, center } => {
                signal_std * signal_std * (t - center) * (u - center)
            }
            Kernel::Rbf {
                signal_std,
                length_scale,
            } => {
                let d = t - u;
                signal_std * signal_std * (-0.5 * d * d / (length_scale * length_scale)).exp()
            }
            Kernel::Periodic {
                signal_std,
                length_scale,
                period,
            } => {
                let s = (std::f64::consts::PI * (t - u).abs() / period).sin();
                signal_std * signal_std * (-2.0 * s * s / (length_scale * length_scale)).exp()
            }
            Kernel::RationalQuadratic {
                signal_std,
                length_scale,
                alpha,
            } => {
                let d = t - u;
                let z = 1.0 + d * d / (2.0 * alpha * length_scale * length_scale);
                signal_std * signal_std * z.powf(-alpha)
            }
            Kernel::Matern32 {
                signal_std,
                length_scale,
            } => {
                let s = 3f64.sqrt() * (t - u).abs() / length_scale;
                signal_std * signal_std * (1.0 + s) * (-s).exp()
            }
            Kernel::Matern52 {
                signal_std,
                length_scale,
            } => {
                let s = 5f64.sqrt() * (t - u).abs() / length_scale;
                signal_std * signal_std * (1.0 + s + s * s / 3.0) * (-s).exp()
            }
            Kernel::Sum(a, b) => a.eval(t, u) + b.eval(t, u),
            Kernel::Product(a, b) => a.eval(t, u) * b.eval(t, u),
        }
    }

    /// Gram matrix over one time set.
    pub fn gram(&self, times: &[f64]) -> DMatrix<f64> {
        let n = times.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = self.eval(times[i], times[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    /// Cross-covariance between two time sets (rows: `a`, cols: `b`).
    pub fn cross(&self, a: &[f64], b: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(a.len(), b.len(), |i, j| self.eval(a[i], b[j]))
    }

    /// Gram matrix together with its gradient w.r.t. each free parameter
    /// (natural units), ordered as in [`Kernel::params`].
    pub fn gram_with_grads(&self, times: &[f64]) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let n = times.len();
        match self {
            Kernel::Sum(a, b) => {
                let (ka, mut ga) = a.gram_with_grads(times);
                let (kb, gb) = b.gram_with_grads(times);
                ga.extend(gb);
                (ka + kb, ga)
            }
            Kernel::Product(a, b) => {
                let (ka, ga) = a.gram_with_grads(times);
                let (kb, gb) = b.gram_with_grads(times);
                let mut grads = Vec::with_capacity(ga.len() + gb.len());
                for g in ga {
                    grads.push(g.component_mul(&kb));
                }
                for g in gb {
                    grads.push(ka.component_mul(&g));
                }
                (ka.component_mul(&kb), grads)
            }
            _ => {
                let pc = self.param_count();
                let mut k = DMatrix::zeros(n, n);
                let mut grads = vec![DMatrix::zeros(n, n); pc];
                let mut buf = [0.0f64; 3];
                for i in 0..n {
                    for j in i..n {
                        let v = self.eval_grad_prim(times[i], times[j], &mut buf);
                        k[(i, j)] = v;
                        k[(j, i)] = v;
                        for (p, g) in grads.iter_mut().enumerate() {
                            g[(i, j)] = buf[p];
                            g[(j, i)] = buf[p];
                        }
                    }
                }
                (k, grads)
            }
        }
    }

    /// Primitive-only value and gradient; `grad` holds `param_count` entries.
    fn eval_grad_prim(&self, t: f64, u: f64, grad: &mut [f64; 3]) -> f64 {
        match self {
            Kernel::Linear { signal_std, center } => {
                let base = (t - center) * (u - center);
                let k = signal_std * signal_std * base;
                grad[0] = 2.0 * signal_std * base;
                k
            }
            Kernel::Rbf {
                signal_std,
                length_scale,
            } => {
                let d2 = (t - u) * (t - u);
                let l2 = length_scale * length_scale;
                let e = (-0.5 * d2 / l2).exp();
                let k = signal_std * signal_std * e;
                grad[0] = 2.0 * signal_std * e;
                grad[1] = k * d2 / (l2 * length_scale);
                k
            }
            Kernel::Periodic {
                signal_std,
                length_scale,
                period,
            } => {
                let s = (std::f64::consts::PI * (t - u).abs() / period).sin();
                let s2 = s * s;
                let l2 = length_scale * length_scale;
                let e = (-2.0 * s2 / l2).exp();
                let k = signal_std * signal_std * e;
                grad[0] = 2.0 * signal_std * e;
                grad[1] = k * 4.0 * s2 / (l2 * length_scale);
                k
            }
            Kernel::RationalQuadratic {
                signal_std,
                length_scale,
                alpha,
            } => {
                let d2 = (t - u) * (t - u);
                let l2 = length_scale * length_scale;
                let z = d2 / (2.0 * alpha * l2);
                let base = (1.0 + z).powf(-alpha);
                let k = signal_std * signal_std * base;
                grad[0] = 2.0 * signal_std * base;
                grad[1] = k * 2.0 * alpha * z / ((1.0 + z) * length_scale);
                grad[2] = k * (-(1.0 + z).ln() + z / (1.0 + z));
                k
            }
            Kernel::Matern32 {
                signal_std,
                length_scale,
            } => {
                let s = 3f64.sqrt() * (t - u).abs() / length_scale;
                let e = (-s).exp();
                let k = signal_std * signal_std * (1.0 + s) * e;
                grad[0] = 2.0 * signal_std * (1.0 + s) * e;
                grad[1] = signal_std * signal_std * s * s * e / length_scale;
                k
            }
            Kernel::Matern52 {
                signal_std,
                length_scale,
            } => {
                let s = 5f64.sqrt() * (t - u).abs() / length_scale;
                let e = (-s).exp();
                let k = signal_std * signal_std * (1.0 + s + s * s / 3.0) * e;
                grad[0] = 2.0 * signal_std * (1.0 + s + s * s / 3.0) * e;
                grad[1] = signal_std * signal_std * e * (s * s + s * s * s) / (3.0 * length_scale);
                k
            }
            Kernel::Sum(..) | Kernel::Product(..) => unreachable!("primitive only"),
        }
    }

    /// Canonical structure string, e.g. `rbf+periodic` or `(rbf+periodic)*linear`.
    pub fn structure(&self) -> String {
        match self {
            Kernel::Linear { .. } => "linear".into(),
            Kernel::Rbf { .. } => "rbf".into(),
            Kernel::Periodic { .. } => "periodic".into(),
            Kernel::RationalQuadratic { .. } => "rq".into(),
            Kernel::Matern32 { .. } => "matern32".into(),
            Kernel::Matern52 { .. } => "matern52".into(),
            Kernel::Sum(a, b) => format!("{}+{}", a.structure(), b.structure()),
            Kernel::Product(a, b) => {
                let wrap = |k: &Kernel| match k {
                    Kernel::Sum(..) => format!("({})", k.structure()),
                    _ => k.structure(),
                };
                format!("{}*{}", wrap(a), wrap(b))
            }
        }
    }

    /// Parses a structure string: primitives `linear`, `rbf`, `periodic`,
    /// `rq`, `matern32`, `matern52` combined with `+`, `*`, and parentheses.
    pub fn parse(s: &str) -> Result<Kernel> {
        let tokens = tokenize(s)?;
        let mut pos = 0;
        let kernel = parse_sum(&tokens, &mut pos)?;
        if pos != tokens.len() {
            return Err(Error::KernelParse(format!(
                "unexpected trailing input in kernel {s:?}"
            )));
        }
        Ok(kernel)
    }
}

impl std::fmt::Display for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.structure())
    }
}

#[derive(Debug, PartialEq)]
enum Token {
    Name(String),
    Plus,
    Star,
    Open,
    Close,
}

fn tokenize(s: &str) -> Result<Vec<Token>> {
    let mut tokens = Vec::new();
    let mut chars = s.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            ' ' | '\t' => {
                chars.next();
            }
            '+' => {
                chars.next();
                tokens.push(Token::Plus);
            }
            '*' => {
                chars.next();
                tokens.push(Token::Star);
            }
            '(' => {
                chars.next();
                tokens.push(Token::Open);
            }
            ')' => {
                chars.next();
                tokens.push(Token::Close);
            }
            c if c.is_ascii_alphanumeric() || c == '_' => {
                let mut name = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        name.push(c);
                        chars.next();
                    } else {
                        break;
                    }
                }
                tokens.push(Token::Name(name));
            }
            other => {
                return Err(Error::KernelParse(format!(
                    "unexpected character {other:?} in kernel string"
                )))
            }
        }
    }
    Ok(tokens)
}

fn parse_sum(tokens: &[Token], pos: &mut usize) -> Result<Kernel> {
    let mut left = parse_product(tokens, pos)?;
    while matches!(tokens.get(*pos), Some(Token::Plus)) {
        *pos += 1;
        let right = parse_product(tokens, pos)?;
        left = Kernel::sum(left, right);
    }
    Ok(left)
}

fn parse_product(tokens: &[Token], pos: &mut usize) -> Result<Kernel> {
    let mut left = parse_atom(tokens, pos)?;
    while matches!(tokens.get(*pos), Some(Token::Star)) {
        *pos += 1;
        let right = parse_atom(tokens, pos)?;
        left = Kernel::product(left, right);
    }
    Ok(left)
}

fn parse_atom(tokens: &[Token], pos: &mut usize) -> Result<Kernel> {
    match tokens.get(*pos) {
        Some(Token::Open) => {
            *pos += 1;
            let inner = parse_sum(tokens, pos)?;
            if !matches!(tokens.get(*pos), Some(Token::Close)) {
                return Err(Error::KernelParse("missing closing parenthesis".into()));
            }
            *pos += 1;
            Ok(inner)
        }
        Some(Token::Name(name)) => {
            *pos += 1;
            match name.to_ascii_lowercase().as_str() {
                "linear" => Ok(Kernel::linear()),
                "rbf" => Ok(Kernel::rbf()),
                "periodic" => Ok(Kernel::periodic()),
                "rq" | "rationalquadratic" | "rational_quadratic" => {
                    Ok(Kernel::rational_quadratic())
                }
                "matern32" => Ok(Kernel::matern32()),
                "matern52" => Ok(Kernel::matern52()),
                other => Err(Error::KernelParse(format!("unknown kernel {other:?}"))),
            }
        }
        other => Err(Error::KernelParse(format!(
            "expected kernel name, found {other:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn all_primitives() -> Vec<Kernel> {
        vec![
            Kernel::linear(),
            Kernel::rbf(),
            Kernel::periodic(),
            Kernel::rational_quadratic(),
            Kernel::matern32(),
            Kernel::matern52(),
        ]
    }

    #[test]
    fn parse_and_display_round_trip() {
        for s in [
            "rbf",
            "rbf+periodic",
            "linear*rbf",
            "(rbf+periodic)*matern32",
            "rq",
        ] {
            let k = Kernel::parse(s).unwrap();
            assert_eq!(k.structure(), s);
        }
        assert!(Kernel::parse("rbf+").is_err());
        assert!(Kernel::parse("gauss").is_err());
        assert!(Kernel::parse("(rbf").is_err());
    }

    #[test]
    fn symmetry_and_psd_on_random_time_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut kernels = all_primitives();
        kernels.push(Kernel::parse("rbf+periodic").unwrap());
        kernels.push(Kernel::parse("linear*periodic").unwrap());
        for mut kernel in kernels {
            for _ in 0..100 {
                let n = rng.gen_range(2..10);
                let mut times: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..500.0)).collect();
                times.sort_by(|a, b| a.partial_cmp(b).unwrap());
                times.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
                kernel.set_linear_centers(&times);
                // Randomize hyperparameters within sane ranges.
                let params: Vec<f64> = kernel
                    .params()
                    .iter()
                    .map(|_| rng.gen_range(0.2..5.0))
                    .collect();
                kernel.set_params(&params);
                let gram = kernel.gram(&times);
                for i in 0..times.len() {
                    for j in 0..times.len() {
                        assert!((gram[(i, j)] - gram[(j, i)]).abs() < 1e-12);
                    }
                }
                let eigen = SymmetricEigen::new(gram);
                let min = eigen.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
                let scale = eigen.eigenvalues.iter().cloned().fold(0.0f64, f64::max).max(1.0);
                assert!(
                    min >= -1e-8 * scale,
                    "kernel {} min eigenvalue {min}",
                    kernel.structure()
                );
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_entrywise() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let times: Vec<f64> = (0..6).map(|i| i as f64 * 3.7).collect();
        let mut kernels = all_primitives();
        kernels.push(Kernel::parse("rbf*periodic").unwrap());
        kernels.push(Kernel::parse("linear+matern52").unwrap());
        for mut kernel in kernels {
            kernel.set_linear_centers(&times);
            for _ in 0..20 {
                let params: Vec<f64> = kernel
                    .params()
                    .iter()
                    .map(|_| rng.gen_range(0.3..4.0))
                    .collect();
                kernel.set_params(&params);
                let (_, grads) = kernel.gram_with_grads(&times);
                for p in 0..params.len() {
                    let h = 1e-6 * params[p].max(1.0);
                    let mut plus = params.clone();
                    plus[p] += h;
                    let mut minus = params.clone();
                    minus[p] -= h;
                    let mut kp = kernel.clone();
                    kp.set_params(&plus);
                    let mut km = kernel.clone();
                    km.set_params(&minus);
                    let gp = kp.gram(&times);
                    let gm = km.gram(&times);
                    for i in 0..times.len() {
                        for j in 0..times.len() {
                            let fd = (gp[(i, j)] - gm[(i, j)]) / (2.0 * h);
                            let an = grads[p][(i, j)];
                            assert!(
                                (fd - an).abs() <= 1e-5 * (1.0 + fd.abs()),
                                "kernel {} param {p}: fd {fd} vs analytic {an}",
                                kernel.structure()
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn prior_variance_is_sum_of_signal_variances() {
        let kernel = Kernel::parse("rbf+periodic").unwrap();
        let k_self = kernel.eval(10.0, 10.0);
        assert!((k_self - 2.0).abs() < 1e-12); // both signal stds are 1
    }
}
