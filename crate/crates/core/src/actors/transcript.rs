use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    TerminalToCard,
    CardToTerminal,
    TerminalToIssuer,
    IssuerToTerminal,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::TerminalToCard => "T->C",
            Direction::CardToTerminal => "C->T",
            Direction::TerminalToIssuer => "T->I",
            Direction::IssuerToTerminal => "I->T",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "T->C" => Direction::TerminalToCard,
            "C->T" => Direction::CardToTerminal,
            "T->I" => Direction::TerminalToIssuer,
            "I->T" => Direction::IssuerToTerminal,
            _ => return None,
        })
    }

    pub fn is_card_leg(self) -> bool {
        matches!(self, Direction::TerminalToCard | Direction::CardToTerminal)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub dir: Direction,
    pub msg: &'static str,
    pub payload: Vec<u8>,
}

/// Append-only message log of one transaction.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn new() -> Self {
        Transcript::default()
    }

    pub fn push(&mut self, dir: Direction, msg: &'static str, payload: Vec<u8>) {
        self.entries.push(TranscriptEntry { dir, msg, payload });
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Payload of the `n`th entry with this direction and message name.
    pub fn find(&self, dir: Direction, msg: &str, n: usize) -> Option<&[u8]> {
        self.entries
            .iter()
            .filter(|e| e.dir == dir && e.msg == msg)
            .nth(n)
            .map(|e| e.payload.as_slice())
    }

    /// Canonical form: one `SEQ DIR MSG HEXPAYLOAD` line per entry, `-` for
    /// an empty payload.
    pub fn to_canonical(&self) -> String {
        self.to_string()
    }

    pub fn card_legs(&self) -> Transcript {
        Transcript {
            entries: self.entries.iter().filter(|e| e.dir.is_card_leg()).cloned().collect(),
        }
    }
}

impl fmt::Display for Transcript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.entries.iter().enumerate() {
            let hex = if e.payload.is_empty() {
                "-".to_string()
            } else {
                hex::encode(&e.payload)
            };
            writeln!(f, "{:04} {} {} {}", i, e.dir.as_str(), e.msg, hex)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_lines() {
        let mut t = Transcript::new();
        t.push(Direction::TerminalToCard, "READ_RECORDS", vec![]);
        t.push(Direction::IssuerToTerminal, "AUTH_RESPONSE", vec![0x30, 0x30]);
        assert_eq!(t.to_canonical(), "0000 T->C READ_RECORDS -\n0001 I->T AUTH_RESPONSE 3030\n");
        assert_eq!(t.card_legs().len(), 1);
        assert_eq!(Direction::parse("C->T"), Some(Direction::CardToTerminal));
    }
}
