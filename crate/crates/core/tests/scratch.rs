#[test]
fn tape_sizes() {
    for (name, _) in finsler_core::zoo::builtin_sources() {
        let m = finsler_core::zoo::builtin(name).unwrap();
        let (full, spray, frame) = m.tape_sizes();
        println!("{name:26} full={full:7} spray={spray:6} frame={frame:7}");
    }
}
