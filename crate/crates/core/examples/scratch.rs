use ui_rkd::search_model::*;
fn main(){
    let s = Solver::default();
    let mut p = ModelParams::calibrated();
    s.solve(&p).unwrap();
    let t=std::time::Instant::now();
    let mut it=0;
    for i in 0..1000 { p.b = 250.0 + 0.15*i as f64; it += s.solve(&p).unwrap().iterations; }
    println!("{:?} per solve, {} iters avg", t.elapsed()/1000, it/1000);
}
