//! Trace persistence: a small fixed little-endian binary record format for
//! waveform dumps plus plain CSV emitters for plotting.
//!
//! Binary layout (all little-endian):
//!
//! ```text
//!   magic    [u8; 8]  = b"KLJNREC1"
//!   version  u32      = 1
//!   channels u32
//!   count    u64        samples per channel
//!   dt       f64        sample spacing in seconds
//!   data     channels × count f64, channel-major
//! ```
//!
//! Traces store five channels in the fixed order `u_a, u_b, u_1, u_2, i`.
//! Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::channel::Trace;
use crate::noise::Signal;
use crate::{Error, Result};

pub const TRACE_MAGIC: &[u8; 8] = b"KLJNREC1";
pub const TRACE_VERSION: u32 = 1;
/// Channel order of a serialized trace.
pub const TRACE_CHANNELS: [&str; 5] = ["u_a", "u_b", "u_1", "u_2", "i"];

/// Refuse to allocate for obviously corrupt headers.
const MAX_SAMPLES_PER_CHANNEL: u64 = 1 << 30;

fn write_f64s(w: &mut impl Write, xs: &[f64]) -> std::io::Result<()> {
    // One pass through a byte buffer keeps the writer call count low.
    let mut buf = Vec::with_capacity(xs.len() * 8);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk is 8 bytes")))
        .collect())
}

/// Write a trace as a binary record.
pub fn write_trace(path: &Path, t: &Trace) -> Result<()> {
    let channels: [&[f64]; 5] = [&t.u_a, &t.u_b, &t.u_1, &t.u_2, &t.i];
    let count = t.len();
    if channels.iter().any(|c| c.len() != count) {
        return Err(Error::invalid("write_trace", "channel lengths differ"));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(TRACE_MAGIC)?;
    w.write_all(&TRACE_VERSION.to_le_bytes())?;
    w.write_all(&(channels.len() as u32).to_le_bytes())?;
    w.write_all(&(count as u64).to_le_bytes())?;
    w.write_all(&t.dt.to_le_bytes())?;
    for c in channels {
        write_f64s(&mut w, c)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a binary trace record written by [`write_trace`].
pub fn read_trace(path: &Path) -> Result<Trace> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != TRACE_MAGIC {
        return Err(Error::Parse(format!(
            "{}: not a trace record (bad magic)",
            path.display()
        )));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != TRACE_VERSION {
        return Err(Error::Parse(format!(
            "unsupported trace record version {version}"
        )));
    }
    r.read_exact(&mut u32buf)?;
    let channels = u32::from_le_bytes(u32buf);
    if channels as usize != TRACE_CHANNELS.len() {
        return Err(Error::Parse(format!(
            "expected {} channels, found {channels}",
            TRACE_CHANNELS.len()
        )));
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let count = u64::from_le_bytes(u64buf);
    if count > MAX_SAMPLES_PER_CHANNEL {
        return Err(Error::Parse(format!(
            "implausible sample count {count} in trace header"
        )));
    }
    let mut f64buf = [0u8; 8];
    r.read_exact(&mut f64buf)?;
    let dt = f64::from_le_bytes(f64buf);
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Parse(format!("bad sample spacing {dt}")));
    }

    let n = count as usize;
    let trace = Trace {
        dt,
        u_a: read_f64s(&mut r, n)?,
        u_b: read_f64s(&mut r, n)?,
        u_1: read_f64s(&mut r, n)?,
        u_2: read_f64s(&mut r, n)?,
        i: read_f64s(&mut r, n)?,
    };

    // Trailing bytes mean the header lied about the payload.
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::Parse("trailing bytes after trace payload".into()));
    }
    Ok(trace)
}

/// Write `t,value` rows.
pub fn write_signal_csv(path: &Path, sig: &Signal) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "t,value")?;
    for (k, x) in sig.samples.iter().enumerate() {
        writeln!(w, "{},{}", k as f64 * sig.dt, x)?;
    }
    w.flush()?;
    Ok(())
}

/// Write `t,u_a,u_b,u_1,u_2,i` rows.
pub fn write_trace_csv(path: &Path, t: &Trace) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "t,{}", TRACE_CHANNELS.join(","))?;
    for k in 0..t.len() {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            k as f64 * t.dt,
            t.u_a[k],
            t.u_b[k],
            t.u_1[k],
            t.u_2[k],
            t.i[k]
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("kljn-core-io-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    fn sample_trace(n: usize) -> Trace {
        Trace {
            dt: 1e-5,
            u_a: (0..n).map(|k| k as f64 * 0.25).collect(),
            u_b: (0..n).map(|k| -(k as f64) * 0.5).collect(),
            u_1: (0..n).map(|k| (k as f64).sin()).collect(),
            u_2: (0..n).map(|k| (k as f64).cos()).collect(),
            i: (0..n).map(|k| 1e-6 * k as f64).collect(),
        }
    }

    #[test]
    fn binary_roundtrip_is_bit_exact() {
        let t = sample_trace(257);
        let path = tmp("roundtrip.bin");
        write_trace(&path, &t).unwrap();
        let back = read_trace(&path).unwrap();
        assert_eq!(t, back);

        // Special values survive.
        let mut odd = sample_trace(4);
        odd.u_1 = vec![-0.0, f64::MIN_POSITIVE, 1e300, -1e-300];
        write_trace(&path, &odd).unwrap();
        let back = read_trace(&path).unwrap();
        for (a, b) in odd.u_1.iter().zip(&back.u_1) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn corrupt_records_are_rejected() {
        let path = tmp("corrupt.bin");
        let t = sample_trace(16);
        write_trace(&path, &t).unwrap();

        let bytes = std::fs::read(&path).unwrap();

        // Bad magic.
        let mut bad = bytes.clone();
        bad[0] ^= 0xFF;
        std::fs::write(&path, &bad).unwrap();
        assert!(read_trace(&path).is_err());

        // Truncated payload.
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(read_trace(&path).is_err());

        // Trailing garbage.
        let mut long = bytes.clone();
        long.push(0x55);
        std::fs::write(&path, &long).unwrap();
        assert!(read_trace(&path).is_err());

        // Future version.
        let mut vers = bytes;
        vers[8] = 9;
        std::fs::write(&path, &vers).unwrap();
        assert!(read_trace(&path).is_err());
    }

    #[test]
    fn csv_headers_and_shape() {
        let t = sample_trace(3);
        let path = tmp("trace.csv");
        write_trace_csv(&path, &t).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,u_a,u_b,u_1,u_2,i"));
        assert_eq!(lines.count(), 3);

        let sig = Signal::new(vec![1.0, 2.5], 0.5);
        let path = tmp("signal.csv");
        write_signal_csv(&path, &sig).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,value\n0,1\n0.5,2.5\n"));
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 16, .. ProptestConfig::default() })]

        #[test]
        fn roundtrip_arbitrary_payload(
            vals in proptest::collection::vec(
                prop_oneof![any::<f64>().prop_filter("finite", |x| x.is_finite()),
                            Just(0.0), Just(-0.0)],
                0..48,
            ),
            dt in 1e-9f64..1.0,
        ) {
            let n = vals.len();
            let t = Trace {
                dt,
                u_a: vals.clone(),
                u_b: vals.iter().map(|x| x * 2.0).collect(),
                u_1: vals.iter().map(|x| x - 1.0).collect(),
                u_2: vals.iter().map(|x| x * -0.5).collect(),
                i: vals.clone(),
            };
            let path = tmp(&format!("prop-{n}.bin"));
            write_trace(&path, &t).unwrap();
            let back = read_trace(&path).unwrap();
            prop_assert_eq!(t, back);
        }
    }
}
