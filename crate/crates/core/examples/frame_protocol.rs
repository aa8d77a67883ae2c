// Packet layout, receive scanning plan and the measurement tensor, including
// its CSV form.

use mbjcas::config_io::RootConfig;
use mbjcas::experiments::{sensing_scenario, SensingRig};
use mbjcas::protocol::{symbol_index, MeasurementTensor};

pub fn run_example() -> mbjcas::Result<()> {
    let cfg = RootConfig::default();
    let rig = SensingRig::new(&cfg)?;
    let frame = rig.system.frame;
    println!(
        "{} packets x {} receive beams x {} symbols; packet {:.1} us, cycle {:.1} us",
        frame.n_t,
        frame.n_r,
        frame.n_d,
        frame.packet_period * 1e6,
        frame.sensing_cycle() * 1e6
    );
    println!("third use of receive beam 2 is symbol {}", symbol_index(3, 2, frame.n_r)?);
    for (t, slots) in rig.rx_plan.packets.iter().enumerate() {
        let s: Vec<String> = slots.iter().map(|u| format!("{u:+.3}")).collect();
        println!("packet {}: rx directions {}", t + 1, s.join(" "));
    }

    let tensor = rig.measure(&sensing_scenario(&cfg, 0)?, true)?;
    let mut csv = Vec::new();
    tensor.write_csv(&mut csv)?;
    let back = MeasurementTensor::read_csv(csv.as_slice())?;
    println!(
        "tensor {}x{} slices of {}x{}; CSV {} bytes, round trip exact: {}",
        tensor.n_t(),
        tensor.n_r(),
        tensor.subcarriers(),
        tensor.n_d(),
        csv.len(),
        back == tensor
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> mbjcas::Result<()> {
    run_example()
}
