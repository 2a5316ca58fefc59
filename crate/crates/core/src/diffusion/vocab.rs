use crate::{Error, Result, TokenId};

/// Token alphabet with the reserved absorbing, end-of-sequence and
/// soft-prompt boundary symbols.
///
/// Every id other than `mask`, `bot` and `eot` is *emittable*: it may appear
/// in data and in model outputs. `eos` is emittable; the rest are called
/// content tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Vocabulary {
    size: usize,
    mask: TokenId,
    eos: TokenId,
    bot: TokenId,
    eot: TokenId,
}

impl Vocabulary {
    pub fn new(
        size: usize,
        mask: TokenId,
        eos: TokenId,
        bot: TokenId,
        eot: TokenId,
    ) -> Result<Self> {
        let reserved = [mask, eos, bot, eot];
        if size < 5 {
            return Err(Error::Vocabulary(format!(
                "size {size} leaves no content token after the four reserved symbols"
            )));
        }
        for (i, &a) in reserved.iter().enumerate() {
            if a >= size {
                return Err(Error::Vocabulary(format!("reserved id {a} >= size {size}")));
            }
            if reserved[..i].contains(&a) {
                return Err(Error::Vocabulary(format!("reserved id {a} used twice")));
            }
        }
        Ok(Self {
            size,
            mask,
            eos,
            bot,
            eot,
        })
    }

    /// `content` ordinary tokens at ids `0..content`, followed by EOS, the
    /// two boundary tokens and MASK.
    pub fn with_content(content: usize) -> Result<Self> {
        Self::new(content + 4, content + 3, content, content + 1, content + 2)
    }

    pub fn size(&self) -> usize {
        self.size
    }
    pub fn mask(&self) -> TokenId {
        self.mask
    }
    pub fn eos(&self) -> TokenId {
        self.eos
    }
    pub fn bot(&self) -> TokenId {
        self.bot
    }
    pub fn eot(&self) -> TokenId {
        self.eot
    }

    pub fn is_mask(&self, t: TokenId) -> bool {
        t == self.mask
    }

    pub fn is_boundary(&self, t: TokenId) -> bool {
        t == self.bot || t == self.eot
    }

    /// May appear in data or be predicted (content tokens and EOS).
    pub fn is_emittable(&self, t: TokenId) -> bool {
        t < self.size && t != self.mask && !self.is_boundary(t)
    }

    pub fn is_content(&self, t: TokenId) -> bool {
        self.is_emittable(t) && t != self.eos
    }

    pub fn content_tokens(&self) -> impl Iterator<Item = TokenId> + '_ {
        (0..self.size).filter(move |&t| self.is_content(t))
    }

    pub fn num_content(&self) -> usize {
        self.size - 4
    }

    pub fn check_token(&self, t: TokenId) -> Result<()> {
        if t >= self.size {
            return Err(Error::contract(format!(
                "token {t} outside vocabulary of size {}",
                self.size
            )));
        }
        Ok(())
    }

    /// Point mass on `t` as a dense distribution.
    pub fn point_mass(&self, t: TokenId) -> Vec<f64> {
        let mut d = vec![0.0; self.size];
        d[t] = 1.0;
        d
    }
}
