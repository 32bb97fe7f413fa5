use fluidmem::{config, dynamics};
fn main() {
    let mut cfg = config::preset("letter_c").unwrap();
    config::reduce_resolution(&mut cfg, 4);
    cfg.gmres_restart = 150;
    let mut state = dynamics::init_scenario(&cfg).unwrap();
    let mut iters = 0;
    for _ in 0..3 { iters += dynamics::step(&mut state, &cfg).unwrap().flow_iters; }
    println!("iters: {}", iters);
}
