//! SMF renderer for quantized scores.

use super::{QuantizedScore, TrackRole, RENDER_PPQ, RENDER_VELOCITY};

fn push_vlq(out: &mut Vec<u8>, mut value: u32) {
    let mut stack = [0u8; 4];
    let mut n = 0;
    loop {
        stack[n] = (value & 0x7f) as u8;
        value >>= 7;
        n += 1;
        if value == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        let mut byte = stack[i];
        if i > 0 {
            byte |= 0x80;
        }
        out.push(byte);
    }
}

fn push_chunk(out: &mut Vec<u8>, tag: &[u8; 4], body: &[u8]) {
    out.extend(tag);
    out.extend((body.len() as u32).to_be_bytes());
    out.extend(body);
}

/// One timed event inside a track body. `kind` orders note-offs before
/// note-ons at equal ticks so back-to-back same-pitch notes re-parse
/// with their original durations.
#[derive(PartialEq, Eq, PartialOrd, Ord)]
struct Event {
    tick: u64,
    kind: u8, // 0 = off, 1 = on
    pitch: u8,
}

/// Renders a quantized score as an SMF type 1 file at 480 PPQ: one
/// tempo/meta track plus one named track per role on channels 0/1/2,
/// program 0, fixed velocity. Parsing the output and re-quantizing at
/// the same grid reproduces the input.
pub fn render_midi(score: &QuantizedScore, tempo_bpm: f64) -> Vec<u8> {
    let step_ticks = 4.0 * f64::from(RENDER_PPQ) / f64::from(score.steps_per_bar);
    let mut out = Vec::new();
    out.extend(b"MThd");
    out.extend(6u32.to_be_bytes());
    out.extend(1u16.to_be_bytes());
    out.extend(4u16.to_be_bytes());
    out.extend(RENDER_PPQ.to_be_bytes());

    let mut meta = Vec::new();
    let us_per_quarter = (60_000_000.0 / tempo_bpm).round() as u32;
    meta.push(0x00);
    meta.extend([0xff, 0x51, 0x03]);
    meta.extend(&us_per_quarter.to_be_bytes()[1..]);
    meta.extend([0x00, 0xff, 0x58, 0x04, 4, 2, 24, 8]); // 4/4
    meta.extend([0x00, 0xff, 0x2f, 0x00]);
    push_chunk(&mut out, b"MTrk", &meta);

    for role in TrackRole::ALL {
        let channel = role.index() as u8;
        let mut body = Vec::new();
        let name = role.name().as_bytes();
        body.push(0x00);
        body.extend([0xff, 0x03, name.len() as u8]);
        body.extend(name);
        body.extend([0x00, 0xc0 | channel, 0x00]); // program 0

        let mut events: Vec<Event> = Vec::new();
        for n in &score.tracks[role.index()] {
            let on = (f64::from(n.onset_step) * step_ticks).round() as u64;
            let off = (f64::from(n.onset_step + n.duration_steps) * step_ticks).round() as u64;
            events.push(Event { tick: on, kind: 1, pitch: n.pitch });
            events.push(Event { tick: off, kind: 0, pitch: n.pitch });
        }
        events.sort();
        let mut last_tick = 0u64;
        for ev in events {
            push_vlq(&mut body, (ev.tick - last_tick) as u32);
            last_tick = ev.tick;
            match ev.kind {
                1 => body.extend([0x90 | channel, ev.pitch, RENDER_VELOCITY]),
                _ => body.extend([0x80 | channel, ev.pitch, 0x40]),
            }
        }
        body.extend([0x00, 0xff, 0x2f, 0x00]);
        push_chunk(&mut out, b"MTrk", &body);
    }
    out
}
