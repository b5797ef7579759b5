use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::HeadsError;

/// Sliding-window layout for sequences longer than the encoder input.
///
/// Each window is encoded as `[CLS] tokens [SEP]`, so it holds
/// `window_len - 2` content tokens. Every window after the first repeats the
/// last `carry` tokens of its predecessor and adds `fresh()` new ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowingConfig {
    pub window_len: usize,
    pub carry: usize,
}

impl Default for WindowingConfig {
    fn default() -> Self {
        Self {
            window_len: 128,
            carry: 64,
        }
    }
}

impl WindowingConfig {
    pub fn capacity(&self) -> usize {
        self.window_len.saturating_sub(2)
    }

    pub fn fresh(&self) -> usize {
        self.capacity().saturating_sub(self.carry)
    }

    pub fn validate(&self) -> Result<(), HeadsError> {
        if self.fresh() == 0 {
            return Err(HeadsError::InvalidConfig(format!(
                "window_len {} leaves no fresh tokens after carry {}",
                self.window_len, self.carry
            )));
        }
        Ok(())
    }
}

/// One window over a token sequence. `fresh` is the part of `tokens` whose
/// predictions this window owns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Window {
    pub tokens: Range<usize>,
    pub fresh: Range<usize>,
}

/// Window 1 covers `[0, capacity)`; window `k >= 2` starts at
/// `(k - 1) * fresh` and owns the tokens after its carried prefix.
/// A sequence of `n <= capacity` tokens gets exactly one window.
pub fn plan_windows(n: usize, wcfg: &WindowingConfig) -> Result<Vec<Window>, HeadsError> {
    wcfg.validate()?;
    let (cap, fresh) = (wcfg.capacity(), wcfg.fresh());
    let first = 0..n.min(cap);
    let mut out = vec![Window {
        tokens: first.clone(),
        fresh: first,
    }];
    let mut k = 1;
    while out.last().unwrap().tokens.end < n {
        let start = k * fresh;
        let end = (start + cap).min(n);
        out.push(Window {
            tokens: start..end,
            fresh: (start + wcfg.carry)..end,
        });
        k += 1;
    }
    Ok(out)
}

/// For each token, the index of the window that predicts it.
pub fn token_owners(n: usize, wcfg: &WindowingConfig) -> Result<Vec<usize>, HeadsError> {
    let mut owner = vec![usize::MAX; n];
    for (w, win) in plan_windows(n, wcfg)?.iter().enumerate() {
        for t in win.fresh.clone() {
            if owner[t] == usize::MAX {
                owner[t] = w;
            }
        }
    }
    Ok(owner)
}
