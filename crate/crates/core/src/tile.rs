//! Tile-level cost of a GEMM tile on one core.
//!
//! The MAC array is treated as an `a_r x a_c` grid. The stationary operand is
//! loaded block by block and the other operands are streamed past it; SRAM
//! traffic counts every element moved between the buffer and the array.

use serde::{Deserialize, Serialize};

use crate::design_space::{CoreConfig, Dataflow};
use crate::error::{DseError, Result};

/// Output rows x output columns x reduction depth held by one core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileShape {
    pub m: u64,
    pub n: u64,
    pub k: u64,
    /// Elementwise passes over the output (bias, activation, softmax).
    pub ew_passes: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TileCost {
    pub compute_cycles: u64,
    pub mac_ops: u64,
    pub sram_read_bits: u64,
    pub sram_write_bits: u64,
    /// Cycles per output row, the cadence at which results leave the core.
    pub output_interval_cycles: u64,
}

/// Array shape for `mac` MACs: the largest divisor not above the square root
/// gives the row count.
pub fn array_dims(mac: u32) -> (u64, u64) {
    let mac = mac.max(1) as u64;
    let mut r = (mac as f64).sqrt() as u64;
    while r > 1 && mac % r != 0 {
        r -= 1;
    }
    let r = r.max(1);
    (r, mac / r)
}

/// Element reads and writes between buffer and array for one tile.
pub fn sram_traffic(t: &TileShape, df: Dataflow, mac: u32) -> (u64, u64) {
    let (ar, ac) = array_dims(mac);
    let TileShape { m, n, k, .. } = *t;
    match df {
        Dataflow::WS => {
            let kb = k.div_ceil(ar);
            let nb = n.div_ceil(ac);
            (k * n + m * k * nb + m * n * (kb - 1), m * n * kb)
        }
        Dataflow::IS => {
            let kb = k.div_ceil(ac);
            let mb = m.div_ceil(ar);
            (m * k + k * n * mb + m * n * (kb - 1), m * n * kb)
        }
        Dataflow::OS => {
            let nb = n.div_ceil(ac);
            let mb = m.div_ceil(ar);
            (m * k * nb + k * n * mb, m * n)
        }
    }
}

/// Smallest tile a core must hold: one input row, one weight column and one
/// output element.
pub fn min_tile_bytes(k: u64, precision_bytes: u32) -> u64 {
    (2 * k + 1) * precision_bytes as u64
}

pub fn tile_eval(t: &TileShape, core: &CoreConfig, precision_bytes: u32) -> Result<TileCost> {
    let buffer = core.buffer_size_kb as u64 * 1024;
    if min_tile_bytes(t.k, precision_bytes) > buffer {
        return Err(DseError::TileTooLarge(format!(
            "reduction depth {} needs {} B, buffer holds {buffer} B",
            t.k,
            min_tile_bytes(t.k, precision_bytes)
        )));
    }
    if t.m == 0 || t.n == 0 || t.k == 0 {
        return Ok(TileCost { output_interval_cycles: 1, ..TileCost::default() });
    }
    let bits = 8 * precision_bytes as u64;
    let bw = core.buffer_bw.max(1) as u64;
    let macs = t.m * t.n * t.k;
    let (reads, writes) = sram_traffic(t, core.dataflow, core.mac_num);
    let gemm = macs.div_ceil(core.mac_num.max(1) as u64).max(((reads + writes) * bits).div_ceil(bw));
    let ew_bits = t.ew_passes as u64 * 2 * t.m * t.n * bits;
    let compute_cycles = gemm + ew_bits.div_ceil(bw);
    Ok(TileCost {
        compute_cycles,
        mac_ops: macs,
        sram_read_bits: reads * bits + ew_bits / 2,
        sram_write_bits: writes * bits + ew_bits / 2,
        output_interval_cycles: compute_cycles.div_ceil(t.m).max(1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn core(df: Dataflow, mac: u32, bw: u32) -> CoreConfig {
        CoreConfig { dataflow: df, mac_num: mac, buffer_size_kb: 256, buffer_bw: bw, noc_bw: 256 }
    }

    /// Walks the blocked loop nest and counts every element transfer.
    fn loop_nest(t: &TileShape, df: Dataflow, mac: u32) -> (u64, u64) {
        let (ar, ac) = array_dims(mac);
        let (m, n, k) = (t.m, t.n, t.k);
        let (mut rd, mut wr) = (0u64, 0u64);
        let blocks = |len: u64, b: u64| (0..len.div_ceil(b)).map(move |i| (i * b, ((i + 1) * b).min(len)));
        match df {
            Dataflow::WS => {
                for (n0, n1) in blocks(n, ac) {
                    for (i, (k0, k1)) in blocks(k, ar).enumerate() {
                        rd += (k1 - k0) * (n1 - n0);
                        for _row in 0..m {
                            rd += k1 - k0;
                            if i > 0 {
                                rd += n1 - n0;
                            }
                            wr += n1 - n0;
                        }
                    }
                }
            }
            Dataflow::IS => {
                for (m0, m1) in blocks(m, ar) {
                    for (i, (k0, k1)) in blocks(k, ac).enumerate() {
                        rd += (m1 - m0) * (k1 - k0);
                        for _col in 0..n {
                            rd += k1 - k0;
                            if i > 0 {
                                rd += m1 - m0;
                            }
                            wr += m1 - m0;
                        }
                    }
                }
            }
            Dataflow::OS => {
                for (m0, m1) in blocks(m, ar) {
                    for (n0, n1) in blocks(n, ac) {
                        for _kk in 0..k {
                            rd += (m1 - m0) + (n1 - n0);
                        }
                        wr += (m1 - m0) * (n1 - n0);
                    }
                }
            }
        }
        (rd, wr)
    }

    #[test]
    fn closed_form_matches_loop_nest() {
        let shapes = [(8, 8, 64), (13, 7, 29), (1, 100, 3), (64, 1, 17), (33, 65, 9)];
        for mac in [8u32, 64, 128, 512, 96] {
            for &(m, n, k) in &shapes {
                let t = TileShape { m, n, k, ew_passes: 0 };
                for df in Dataflow::ALL {
                    assert_eq!(sram_traffic(&t, df, mac), loop_nest(&t, df, mac), "{df} mac={mac} {m}x{n}x{k}");
                }
            }
        }
    }

    #[test]
    fn mac_bound_tile() {
        let t = TileShape { m: 8, n: 8, k: 64, ew_passes: 0 };
        let c = tile_eval(&t, &core(Dataflow::WS, 64, 1 << 20), 2).unwrap();
        assert_eq!(c.compute_cycles, 64);
        assert_eq!(c.output_interval_cycles, 8);
    }

    #[test]
    fn bandwidth_bound_tile() {
        let t = TileShape { m: 8, n: 8, k: 64, ew_passes: 0 };
        let c = tile_eval(&t, &core(Dataflow::OS, 64, 32), 2).unwrap();
        let bits = c.sram_read_bits + c.sram_write_bits;
        assert_eq!(c.compute_cycles, bits.div_ceil(32));
        assert!(c.compute_cycles > 64);
    }

    #[test]
    fn dataflows_agree_when_compute_bound() {
        let t = TileShape { m: 32, n: 48, k: 64, ew_passes: 0 };
        let ws = tile_eval(&t, &core(Dataflow::WS, 64, 1 << 20), 2).unwrap();
        let os = tile_eval(&t, &core(Dataflow::OS, 64, 1 << 20), 2).unwrap();
        assert_eq!(ws.compute_cycles, os.compute_cycles);
        assert_ne!(ws.sram_read_bits, os.sram_read_bits);
    }

    #[test]
    fn oversize_reduction_is_rejected() {
        let t = TileShape { m: 1, n: 1, k: 1 << 20, ew_passes: 0 };
        assert!(matches!(tile_eval(&t, &core(Dataflow::WS, 64, 256), 2), Err(DseError::TileTooLarge(_))));
    }
}
