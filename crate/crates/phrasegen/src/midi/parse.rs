//! SMF (Standard MIDI File) parser, types 0 and 1.

use super::{MidiError, RawNote, Score, TimeSignature, TrackRole};

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(data: &'a [u8]) -> Cursor<'a> {
        Cursor { data, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], MidiError> {
        if self.remaining() < n {
            return Err(MidiError::MalformedMidi(format!(
                "truncated file: needed {n} bytes at offset {}",
                self.pos
            )));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, MidiError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, MidiError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, MidiError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// Variable-length quantity, at most 4 bytes per the SMF spec.
    fn vlq(&mut self) -> Result<u32, MidiError> {
        let mut value: u32 = 0;
        for _ in 0..4 {
            let byte = self.u8()?;
            value = (value << 7) | u32::from(byte & 0x7f);
            if byte & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(MidiError::MalformedMidi("unterminated variable-length quantity".into()))
    }
}

#[derive(Default)]
struct ParsedTrack {
    name: Option<String>,
    notes: Vec<RawNote>,
}

struct MetaState {
    time_signatures: Vec<TimeSignature>,
    tempo_bpm: Option<f64>,
}

/// Parses an SMF type 0 or 1 file into a three-track [`Score`].
///
/// Tracks claim roles by name first (`MELODY` / `BRIDGE` / `PIANO`,
/// case-insensitive); remaining note-bearing tracks fill the unclaimed
/// roles in file order. Note-bearing tracks beyond the three roles are
/// dropped.
pub fn parse_midi(bytes: &[u8]) -> Result<Score, MidiError> {
    let mut cur = Cursor::new(bytes);
    let magic = cur.take(4)?;
    if magic != b"MThd" {
        return Err(MidiError::MalformedMidi("missing MThd header".into()));
    }
    let header_len = cur.u32()? as usize;
    if header_len < 6 {
        return Err(MidiError::MalformedMidi("MThd shorter than 6 bytes".into()));
    }
    let format = cur.u16()?;
    let declared_tracks = cur.u16()?;
    let division = cur.u16()?;
    cur.take(header_len - 6)?;

    if format == 2 {
        return Err(MidiError::UnsupportedFormat("SMF type 2".into()));
    }
    if format > 2 {
        return Err(MidiError::MalformedMidi(format!("unknown SMF format {format}")));
    }
    if division & 0x8000 != 0 {
        return Err(MidiError::UnsupportedFormat("SMPTE time division".into()));
    }
    if division == 0 {
        return Err(MidiError::MalformedMidi("zero ticks per quarter note".into()));
    }

    let mut meta = MetaState { time_signatures: Vec::new(), tempo_bpm: None };
    let mut tracks: Vec<ParsedTrack> = Vec::new();
    while cur.remaining() >= 8 {
        let chunk_type = cur.take(4)?.to_owned();
        let chunk_len = cur.u32()? as usize;
        let body = cur.take(chunk_len)?;
        if &chunk_type == b"MTrk" {
            tracks.push(parse_track(body, &mut meta)?);
        }
        // alien chunks are skipped per the SMF spec
    }
    if tracks.len() < usize::from(declared_tracks) {
        return Err(MidiError::MalformedMidi(format!(
            "header declares {declared_tracks} tracks, found {}",
            tracks.len()
        )));
    }

    let mut score = Score::empty(division);
    score.time_signatures = meta.time_signatures;
    score.time_signatures.sort_by_key(|ts| ts.tick);
    if let Some(bpm) = meta.tempo_bpm {
        score.tempo_bpm = bpm;
    }
    assign_roles(tracks, &mut score);
    Ok(score)
}

fn parse_track(body: &[u8], meta: &mut MetaState) -> Result<ParsedTrack, MidiError> {
    let mut cur = Cursor::new(body);
    let mut track = ParsedTrack::default();
    let mut tick: u64 = 0;
    let mut running_status: Option<u8> = None;
    // (channel, pitch) -> onset ticks and velocity of not-yet-closed notes,
    // matched first-in-first-out
    let mut open: std::collections::HashMap<(u8, u8), std::collections::VecDeque<(u64, u8)>> =
        std::collections::HashMap::new();

    while cur.remaining() > 0 {
        tick += u64::from(cur.vlq()?);
        let first = cur.u8()?;
        let status = if first & 0x80 != 0 {
            if first < 0xf0 {
                running_status = Some(first);
            }
            first
        } else {
            cur.pos -= 1;
            running_status.ok_or_else(|| {
                MidiError::MalformedMidi("data byte with no running status".into())
            })?
        };

        match status & 0xf0 {
            0x90 => {
                let pitch = cur.u8()? & 0x7f;
                let velocity = cur.u8()? & 0x7f;
                let channel = status & 0x0f;
                if velocity > 0 {
                    open.entry((channel, pitch)).or_default().push_back((tick, velocity));
                } else {
                    close_note(&mut track, &mut open, channel, pitch, tick);
                }
            }
            0x80 => {
                let pitch = cur.u8()? & 0x7f;
                let _release = cur.u8()?;
                let channel = status & 0x0f;
                close_note(&mut track, &mut open, channel, pitch, tick);
            }
            // two-byte channel messages we don't model
            0xa0 | 0xb0 | 0xe0 => {
                cur.take(2)?;
            }
            // one-byte channel messages
            0xc0 | 0xd0 => {
                cur.take(1)?;
            }
            0xf0 => match status {
                0xf0 | 0xf7 => {
                    let len = cur.vlq()? as usize;
                    cur.take(len)?;
                }
                0xff => {
                    let meta_type = cur.u8()?;
                    let len = cur.vlq()? as usize;
                    let data = cur.take(len)?;
                    match meta_type {
                        0x03 => {
                            if track.name.is_none() {
                                track.name = Some(String::from_utf8_lossy(data).into_owned());
                            }
                        }
                        0x51 => {
                            if data.len() == 3 && meta.tempo_bpm.is_none() {
                                let us = u32::from_be_bytes([0, data[0], data[1], data[2]]);
                                if us > 0 {
                                    meta.tempo_bpm = Some(60_000_000.0 / f64::from(us));
                                }
                            }
                        }
                        0x58 => {
                            if data.len() >= 2 {
                                meta.time_signatures.push(TimeSignature {
                                    tick,
                                    numerator: data[0],
                                    denominator: 1u8.checked_shl(u32::from(data[1])).unwrap_or(0),
                                });
                            }
                        }
                        0x2f => break,
                        _ => {}
                    }
                }
                other => {
                    return Err(MidiError::MalformedMidi(format!(
                        "unexpected status byte {other:#04x}"
                    )));
                }
            },
            _ => unreachable!("status bytes always have the high bit set"),
        }
    }

    if open.values().any(|q| !q.is_empty()) {
        return Err(MidiError::MalformedMidi("note-on without matching note-off".into()));
    }
    track.notes.sort_by_key(|n| (n.onset_ticks, n.pitch));
    Ok(track)
}

fn close_note(
    track: &mut ParsedTrack,
    open: &mut std::collections::HashMap<(u8, u8), std::collections::VecDeque<(u64, u8)>>,
    channel: u8,
    pitch: u8,
    tick: u64,
) {
    // stray note-offs are ignored
    if let Some((onset, velocity)) = open.get_mut(&(channel, pitch)).and_then(|q| q.pop_front()) {
        track.notes.push(RawNote {
            pitch,
            onset_ticks: onset,
            duration_ticks: tick.saturating_sub(onset).max(1),
            velocity: velocity.max(1),
            track_index: 0,
        });
    }
}

fn assign_roles(tracks: Vec<ParsedTrack>, score: &mut Score) {
    let mut role_of: Vec<Option<TrackRole>> = vec![None; tracks.len()];
    let mut claimed = [false; 3];
    for (i, tr) in tracks.iter().enumerate() {
        if let Some(role) = tr.name.as_deref().and_then(TrackRole::from_name) {
            if !claimed[role.index()] {
                claimed[role.index()] = true;
                role_of[i] = Some(role);
            }
        }
    }
    for (i, tr) in tracks.iter().enumerate() {
        if role_of[i].is_some() || tr.notes.is_empty() {
            continue;
        }
        if let Some(role) = TrackRole::ALL.iter().find(|r| !claimed[r.index()]) {
            claimed[role.index()] = true;
            role_of[i] = Some(*role);
        }
    }
    for (tr, role) in tracks.into_iter().zip(role_of) {
        if let Some(role) = role {
            let idx = role.index();
            score.tracks[idx] = tr.notes;
            for n in &mut score.tracks[idx] {
                n.track_index = idx;
            }
            score.tracks[idx].sort_by_key(|n| (n.onset_ticks, n.pitch));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::midi::is_four_four;

    /// Hand-assembled SMF type 1 bytes, built field by field from the SMF
    /// spec rather than through our writer.
    fn fixture_one_note() -> Vec<u8> {
        let mut b: Vec<u8> = Vec::new();
        b.extend(b"MThd");
        b.extend(6u32.to_be_bytes());
        b.extend(1u16.to_be_bytes()); // format 1
        b.extend(1u16.to_be_bytes()); // one track
        b.extend(480u16.to_be_bytes()); // ppq
        let track: Vec<u8> = vec![
            0x00, 0x90, 60, 90, // note on C4 at tick 0
            0x83, 0x60, 0x80, 60, 0x40, // note off after 480 ticks (VLQ 83 60)
            0x00, 0xff, 0x2f, 0x00, // end of track
        ];
        b.extend(b"MTrk");
        b.extend((track.len() as u32).to_be_bytes());
        b.extend(&track);
        b
    }

    fn fixture_three_four() -> Vec<u8> {
        let mut b: Vec<u8> = Vec::new();
        b.extend(b"MThd");
        b.extend(6u32.to_be_bytes());
        b.extend(0u16.to_be_bytes()); // format 0
        b.extend(1u16.to_be_bytes());
        b.extend(480u16.to_be_bytes());
        let track: Vec<u8> = vec![
            0x00, 0xff, 0x58, 0x04, 3, 2, 24, 8, // 3/4 at tick 0
            0x00, 0xff, 0x2f, 0x00,
        ];
        b.extend(b"MTrk");
        b.extend((track.len() as u32).to_be_bytes());
        b.extend(&track);
        b
    }

    #[test]
    fn parses_single_quarter_note() {
        let score = parse_midi(&fixture_one_note()).unwrap();
        assert_eq!(score.ppq, 480);
        assert_eq!(score.tracks[0].len(), 1);
        let n = score.tracks[0][0];
        assert_eq!(n.pitch, 60);
        assert_eq!(n.onset_ticks, 0);
        assert_eq!(n.duration_ticks, u64::from(score.ppq));
        assert!(score.tracks[1].is_empty() && score.tracks[2].is_empty());
    }

    #[test]
    fn zero_note_file_gives_three_empty_tracks() {
        let score = parse_midi(&fixture_three_four()).unwrap();
        assert_eq!(score.note_count(), 0);
        assert_eq!(score.tracks.len(), 3);
    }

    #[test]
    fn reads_time_signature_events() {
        let score = parse_midi(&fixture_three_four()).unwrap();
        assert_eq!(
            score.time_signatures,
            vec![TimeSignature { tick: 0, numerator: 3, denominator: 4 }]
        );
        assert!(!is_four_four(&score));
    }

    #[test]
    fn rejects_type_2_files() {
        let mut bytes = fixture_one_note();
        bytes[9] = 2;
        assert!(matches!(parse_midi(&bytes), Err(MidiError::UnsupportedFormat(_))));
    }

    #[test]
    fn rejects_truncated_chunks() {
        let bytes = fixture_one_note();
        let cut = &bytes[..bytes.len() - 4];
        assert!(matches!(parse_midi(cut), Err(MidiError::MalformedMidi(_))));
    }

    #[test]
    fn rejects_unmatched_note_on() {
        let mut b: Vec<u8> = Vec::new();
        b.extend(b"MThd");
        b.extend(6u32.to_be_bytes());
        b.extend(0u16.to_be_bytes());
        b.extend(1u16.to_be_bytes());
        b.extend(480u16.to_be_bytes());
        let track: Vec<u8> = vec![0x00, 0x90, 60, 90, 0x00, 0xff, 0x2f, 0x00];
        b.extend(b"MTrk");
        b.extend((track.len() as u32).to_be_bytes());
        b.extend(&track);
        assert!(matches!(parse_midi(&b), Err(MidiError::MalformedMidi(_))));
    }

    #[test]
    fn running_status_and_velocity_zero_note_off() {
        let mut b: Vec<u8> = Vec::new();
        b.extend(b"MThd");
        b.extend(6u32.to_be_bytes());
        b.extend(0u16.to_be_bytes());
        b.extend(1u16.to_be_bytes());
        b.extend(480u16.to_be_bytes());
        // note on 60, then running-status note on 64, then both off via
        // velocity-zero note ons under running status
        let track: Vec<u8> = vec![
            0x00, 0x90, 60, 90,
            0x00, 64, 90,
            0x83, 0x60, 60, 0,
            0x00, 64, 0,
            0x00, 0xff, 0x2f, 0x00,
        ];
        b.extend(b"MTrk");
        b.extend((track.len() as u32).to_be_bytes());
        b.extend(&track);
        let score = parse_midi(&b).unwrap();
        assert_eq!(score.tracks[0].len(), 2);
        assert!(score.tracks[0].iter().all(|n| n.duration_ticks == 480));
    }

    #[test]
    fn named_tracks_claim_roles_out_of_order() {
        let mut b: Vec<u8> = Vec::new();
        b.extend(b"MThd");
        b.extend(6u32.to_be_bytes());
        b.extend(1u16.to_be_bytes()); // format 1
        b.extend(2u16.to_be_bytes()); // two tracks
        b.extend(480u16.to_be_bytes());
        let mut t1: Vec<u8> = vec![0x00, 0xff, 0x03, 5];
        t1.extend(b"PIANO");
        t1.extend([0x00, 0x90, 40, 90, 0x60, 0x80, 40, 0x40, 0x00, 0xff, 0x2f, 0x00]);
        let mut t2: Vec<u8> = vec![0x00, 0xff, 0x03, 6];
        t2.extend(b"melody");
        t2.extend([0x00, 0x90, 72, 90, 0x60, 0x80, 72, 0x40, 0x00, 0xff, 0x2f, 0x00]);
        for t in [&t1, &t2] {
            b.extend(b"MTrk");
            b.extend((t.len() as u32).to_be_bytes());
            b.extend(t.iter());
        }
        let score = parse_midi(&b).unwrap();
        assert_eq!(score.tracks[TrackRole::Piano.index()][0].pitch, 40);
        assert_eq!(score.tracks[TrackRole::Melody.index()][0].pitch, 72);
        assert!(score.tracks[TrackRole::Bridge.index()].is_empty());
    }
}
