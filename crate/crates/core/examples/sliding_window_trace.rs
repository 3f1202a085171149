//! Print the frame indices held by the window at each step.
//!
//! `cargo run --example sliding_window_trace -- [frames] [theta]`

use warpstab::stabilizer::window_trace;

fn main() -> warpstab::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let n = args.next().unwrap_or(20);
    let theta = args.next().unwrap_or(4);
    for (i, w) in window_trace(n, theta)?.iter().enumerate() {
        let cells: Vec<String> = w.iter().enumerate().map(|(j, k)| if j == theta { format!("[{k}]") } else { k.to_string() }).collect();
        println!("step {:>3}: {}", i + 1, cells.join(" "));
    }
    Ok(())
}
