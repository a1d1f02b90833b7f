use elastolab_core::field::ComplexField;
use elastolab_core::phantom::{sample_spec_with, PhantomClass, PhantomConfig};
use elastolab_core::wavesolve::simulate;
use elastolab_dimenet::infer::{dime_invert, invert_with, Predictor};
use elastolab_dimenet::tensor::Tensor;
use elastolab_dimenet::unet::{init_params, UNetConfig};
use elastolab_dimenet::Result;
use num_complex::Complex64;

struct Constant(f32);

impl Predictor for Constant {
    fn predict(&self, input: Tensor<f32>) -> Result<Tensor<f32>> {
        let (n, _, h, w) = input.nchw()?;
        Ok(Tensor::full(&[n, 1, h, w], self.0))
    }
}

fn field(side: usize) -> ComplexField {
    ComplexField::from_fn(side, side, 1.0, |r, c| Complex64::new((r as f64 * 0.3).cos(), (c as f64 * 0.2).sin())).unwrap()
}

#[test]
fn constant_model_gives_constant_map() {
    let map = invert_with(&Constant(2.5), &field(47), 20, 3).unwrap();
    assert!(map.values().iter().all(|&v| (v - 2500.0).abs() < 1e-9));
    assert_eq!(map.shape(), (47, 47));
}

#[test]
fn repeated_inversion_is_identical() {
    let cfg = UNetConfig { base_channels: 4, ..UNetConfig::default() };
    let params = init_params::<f32>(&cfg, 2).unwrap();
    let spec = sample_spec_with(PhantomClass::Homogeneous, 1, &PhantomConfig { side_mm: 40.0, ..PhantomConfig::default() }).unwrap();
    let (u, _) = simulate(&spec, 60.0, 1000.0).unwrap();
    let a = dime_invert(&cfg, &params, &u, 20, 3).unwrap();
    let b = dime_invert(&cfg, &params, &u, 20, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.shape(), u.shape());
}

#[test]
fn field_smaller_than_patch_is_rejected() {
    let cfg = UNetConfig { base_channels: 4, ..UNetConfig::default() };
    let params = init_params::<f32>(&cfg, 2).unwrap();
    assert!(dime_invert(&cfg, &params, &field(16), 20, 3).is_err());
}
