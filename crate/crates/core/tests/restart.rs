use moist_pe::config::parse_config;
use moist_pe::dynamics::SteadyForcing;
use moist_pe::experiments::random_state;
use moist_pe::snapshot::{emit_snapshot, load_snapshot};
use moist_pe::stepper::{run, StepConfig};
use moist_pe::{FieldKind, State};

const CFG: &str = "seed = 11
[grid]
Nx = 8
Ny = 6
Nz = 5
Lx = 1.3
[forcing]
Q1 = mode
Q1.amplitude = 4
Q2 = bump
Q2.amplitude = 1
[stepping]
dt = 0.01
t_end = 0.2
snapshot_every = 10
";

fn bits(s: &State) -> Vec<u64> {
    FieldKind::ALL
        .iter()
        .flat_map(|&k| s.field(k).raw().iter().map(|v| v.to_bits()))
        .collect()
}

#[test]
fn restart_through_a_snapshot_is_seamless() {
    let cfg = parse_config(CFG).unwrap();
    let g = cfg.grid.build();
    let p = &cfg.params;
    let forcing = SteadyForcing::from_params(p, &g);
    let s0 = random_state(&g, p, cfg.seed, 1.0);
    let whole = run(&s0, p, &g, &cfg.stepping, &forcing, &mut |_, _| {}).unwrap();

    let half = StepConfig {
        t_end: 0.1,
        ..cfg.stepping.clone()
    };
    let first = run(&s0, p, &g, &half, &forcing, &mut |_, _| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.mpe");
    emit_snapshot(&first.state, &g, &path).unwrap();
    let mid = load_snapshot(&path).unwrap();
    let second = run(&mid, p, &g, &half, &forcing, &mut |_, _| {}).unwrap();

    assert_eq!(bits(&second.state), bits(&whole.state));
    assert!((second.state.time - whole.state.time).abs() < 1e-12);
}

#[test]
fn canonical_text_reparses_to_the_same_run() {
    let cfg = parse_config(CFG).unwrap();
    let again = parse_config(&cfg.to_text()).unwrap();
    assert_eq!(again, cfg);
    assert_eq!(again.fingerprint(), cfg.fingerprint());
    let mut other = cfg.clone();
    other.stepping.dt = 0.005;
    assert_ne!(other.fingerprint(), cfg.fingerprint());
}
