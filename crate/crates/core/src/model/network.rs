//! Parameter layout and the teacher-forced encoder-decoder pass.
//!
//! Pre-norm transformer: each sublayer reads a layer-normalized copy of the
//! residual stream and adds its (optionally dropped-out) output back. The
//! encoder reads subword ids with sequential positions; the decoder reads
//! target ids with either sequential or tree positions, added once at the
//! embedding layer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::config::ModelConfig;
use super::kernel::{
    add_into, c, log_softmax_row, AttnCache, Attention, FeedForward, FfnCache, Linear, Norm,
    NormCache, Scalar,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Embedding { rows: usize },
    Weight { fan_in: usize, fan_out: usize },
    Bias,
    Gain,
    Shift,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub kind: TensorKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderLayer {
    pub ln1: Norm,
    pub attn: Attention,
    pub ln2: Norm,
    pub ffn: FeedForward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderLayer {
    pub ln1: Norm,
    pub self_attn: Attention,
    pub ln2: Norm,
    pub cross: Attention,
    pub ln3: Norm,
    pub ffn: FeedForward,
}

/// Where every tensor lives in the flat parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub d_model: usize,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub src_emb: usize,
    pub tgt_emb: usize,
    pub encoder: Vec<EncoderLayer>,
    pub enc_norm: Norm,
    pub decoder: Vec<DecoderLayer>,
    pub dec_norm: Norm,
    pub out: Linear,
    pub tensors: Vec<TensorInfo>,
    pub total: usize,
}

struct Alloc {
    next: usize,
    tensors: Vec<TensorInfo>,
}

impl Alloc {
    fn take(&mut self, name: String, len: usize, kind: TensorKind) -> usize {
        let offset = self.next;
        self.tensors.push(TensorInfo {
            name,
            offset,
            len,
            kind,
        });
        self.next += len;
        offset
    }

    fn linear(&mut self, name: &str, inp: usize, out: usize) -> Linear {
        let w = self.take(
            format!("{name}.w"),
            inp * out,
            TensorKind::Weight {
                fan_in: inp,
                fan_out: out,
            },
        );
        let b = self.take(format!("{name}.b"), out, TensorKind::Bias);
        Linear { w, b, inp, out }
    }

    fn norm(&mut self, name: &str, dim: usize) -> Norm {
        let g = self.take(format!("{name}.g"), dim, TensorKind::Gain);
        let b = self.take(format!("{name}.b"), dim, TensorKind::Shift);
        Norm { g, b, dim }
    }

    fn attention(&mut self, name: &str, d: usize, heads: usize) -> Attention {
        Attention {
            q: self.linear(&format!("{name}.q"), d, d),
            k: self.linear(&format!("{name}.k"), d, d),
            v: self.linear(&format!("{name}.v"), d, d),
            o: self.linear(&format!("{name}.o"), d, d),
            heads,
        }
    }

    fn ffn(&mut self, name: &str, d: usize, f: usize) -> FeedForward {
        FeedForward {
            up: self.linear(&format!("{name}.up"), d, f),
            down: self.linear(&format!("{name}.down"), f, d),
        }
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig, src_vocab: usize, tgt_vocab: usize) -> Self {
        let d = cfg.d_model;
        let mut a = Alloc {
            next: 0,
            tensors: Vec::new(),
        };
        let src_emb = a.take("src_emb".into(), src_vocab * d, TensorKind::Embedding { rows: src_vocab });
        let tgt_emb = a.take("tgt_emb".into(), tgt_vocab * d, TensorKind::Embedding { rows: tgt_vocab });
        let encoder = (0..cfg.encoder_layers)
            .map(|l| EncoderLayer {
                ln1: a.norm(&format!("enc{l}.ln1"), d),
                attn: a.attention(&format!("enc{l}.attn"), d, cfg.heads),
                ln2: a.norm(&format!("enc{l}.ln2"), d),
                ffn: a.ffn(&format!("enc{l}.ffn"), d, cfg.ffn_dim),
            })
            .collect();
        let enc_norm = a.norm("enc.norm", d);
        let decoder = (0..cfg.decoder_layers)
            .map(|l| DecoderLayer {
                ln1: a.norm(&format!("dec{l}.ln1"), d),
                self_attn: a.attention(&format!("dec{l}.self"), d, cfg.heads),
                ln2: a.norm(&format!("dec{l}.ln2"), d),
                cross: a.attention(&format!("dec{l}.cross"), d, cfg.heads),
                ln3: a.norm(&format!("dec{l}.ln3"), d),
                ffn: a.ffn(&format!("dec{l}.ffn"), d, cfg.ffn_dim),
            })
            .collect();
        let dec_norm = a.norm("dec.norm", d);
        let out = a.linear("out", d, tgt_vocab);
        Layout {
            d_model: d,
            src_vocab,
            tgt_vocab,
            src_emb,
            tgt_emb,
            encoder,
            enc_norm,
            decoder,
            dec_norm,
            out,
            total: a.next,
            tensors: a.tensors,
        }
    }

    /// Deterministic initialization: scaled-uniform weights and embeddings,
    /// zero biases, unit gains.
    pub fn init(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = vec![0.0; self.total];
        for t in &self.tensors {
            let slot = &mut p[t.offset..t.offset + t.len];
            match t.kind {
                TensorKind::Embedding { .. } => {
                    let a = (3.0 / self.d_model as f64).sqrt();
                    slot.iter_mut().for_each(|v| *v = rng.gen_range(-a..a));
                }
                TensorKind::Weight { fan_in, fan_out } => {
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    slot.iter_mut().for_each(|v| *v = rng.gen_range(-a..a));
                }
                TensorKind::Gain => slot.iter_mut().for_each(|v| *v = 1.0),
                TensorKind::Bias | TensorKind::Shift => {}
            }
        }
        p
    }
}

/// One teacher-forced training instance with its positional rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Example<T> {
    pub src: Vec<u32>,
    pub dec_in: Vec<u32>,
    pub dec_out: Vec<u32>,
    /// `src.len() x d_model`
    pub src_pos: Vec<T>,
    /// `dec_in.len() x d_model`
    pub dec_pos: Vec<T>,
}

#[derive(Debug, Clone)]
struct EncTrace<T> {
    ln1: NormCache<T>,
    attn: AttnCache<T>,
    drop1: Option<Vec<T>>,
    ln2: NormCache<T>,
    ffn: FfnCache<T>,
    drop2: Option<Vec<T>>,
}

#[derive(Debug, Clone)]
struct DecTrace<T> {
    ln1: NormCache<T>,
    self_attn: AttnCache<T>,
    drop1: Option<Vec<T>>,
    ln2: NormCache<T>,
    cross: AttnCache<T>,
    drop2: Option<Vec<T>>,
    ln3: NormCache<T>,
    ffn: FfnCache<T>,
    drop3: Option<Vec<T>>,
}

/// Activations kept by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct Trace<T> {
    enc: Vec<EncTrace<T>>,
    enc_norm: NormCache<T>,
    dec: Vec<DecTrace<T>>,
    dec_norm: NormCache<T>,
    hidden: Vec<T>,
    /// `dec_in.len() x tgt_vocab` log-probabilities
    pub log_probs: Vec<T>,
}

pub(crate) fn embed<T: Scalar>(table: &[T], ids: &[u32], pos: &[T], d: usize) -> Vec<T> {
    let scale = c::<T>(d as f64).sqrt();
    let mut x = pos.to_vec();
    for (row, &id) in x.chunks_exact_mut(d).zip(ids) {
        let e = &table[id as usize * d..(id as usize + 1) * d];
        for (v, &w) in row.iter_mut().zip(e) {
            *v += w * scale;
        }
    }
    x
}

fn dropout<T: Scalar>(y: &mut [T], rate: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Vec<T>> {
    let rng = rng.filter(|_| rate > 0.0)?;
    let keep = c::<T>(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..y.len())
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect();
    for (v, &m) in y.iter_mut().zip(&mask) {
        *v *= m;
    }
    Some(mask)
}

fn undrop<T: Scalar>(dy: &[T], mask: &Option<Vec<T>>) -> Vec<T> {
    match mask {
        Some(m) => dy.iter().zip(m).map(|(&a, &b)| a * b).collect(),
        None => dy.to_vec(),
    }
}

type EncoderOut<T> = (Vec<T>, Vec<EncTrace<T>>, NormCache<T>);

fn encoder_forward<T: Scalar>(
    layout: &Layout,
    rate: f64,
    p: &[T],
    src: &[u32],
    pos: &[T],
    mut rng: Option<&mut ChaCha8Rng>,
) -> EncoderOut<T> {
    let mut x = embed(&p[layout.src_emb..], src, pos, layout.d_model);
    let mut enc = Vec::with_capacity(layout.encoder.len());
    for l in &layout.encoder {
        let (a, ln1) = l.ln1.forward(p, &x);
        let (mut y, attn) = l.attn.forward(p, &a, &a, false);
        let drop1 = dropout(&mut y, rate, rng.as_deref_mut());
        add_into(&mut x, &y);
        let (b, ln2) = l.ln2.forward(p, &x);
        let (mut f, ffn) = l.ffn.forward(p, &b);
        let drop2 = dropout(&mut f, rate, rng.as_deref_mut());
        add_into(&mut x, &f);
        enc.push(EncTrace {
            ln1,
            attn,
            drop1,
            ln2,
            ffn,
            drop2,
        });
    }
    let (mem, enc_norm) = layout.enc_norm.forward(p, &x);
    (mem, enc, enc_norm)
}

/// Encoder memory for a source sequence (no dropout).
pub(crate) fn encode<T: Scalar>(layout: &Layout, p: &[T], src: &[u32], pos: &[T]) -> Vec<T> {
    encoder_forward(layout, 0.0, p, src, pos, None).0
}

/// Teacher-forced pass; `rng` enables dropout.
pub fn forward<T: Scalar>(
    layout: &Layout,
    rate: f64,
    p: &[T],
    ex: &Example<T>,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Trace<T> {
    let d = layout.d_model;
    let (mem, enc, enc_norm) = encoder_forward(layout, rate, p, &ex.src, &ex.src_pos, rng.as_deref_mut());

    let mut z = embed(&p[layout.tgt_emb..], &ex.dec_in, &ex.dec_pos, d);
    let mut dec = Vec::with_capacity(layout.decoder.len());
    for l in &layout.decoder {
        let (a, ln1) = l.ln1.forward(p, &z);
        let (mut y, self_attn) = l.self_attn.forward(p, &a, &a, true);
        let drop1 = dropout(&mut y, rate, rng.as_deref_mut());
        add_into(&mut z, &y);
        let (b, ln2) = l.ln2.forward(p, &z);
        let (mut y, cross) = l.cross.forward(p, &b, &mem, false);
        let drop2 = dropout(&mut y, rate, rng.as_deref_mut());
        add_into(&mut z, &y);
        let (cc, ln3) = l.ln3.forward(p, &z);
        let (mut f, ffn) = l.ffn.forward(p, &cc);
        let drop3 = dropout(&mut f, rate, rng.as_deref_mut());
        add_into(&mut z, &f);
        dec.push(DecTrace {
            ln1,
            self_attn,
            drop1,
            ln2,
            cross,
            drop2,
            ln3,
            ffn,
            drop3,
        });
    }
    let (hidden, dec_norm) = layout.dec_norm.forward(p, &z);
    let mut log_probs = layout.out.forward(p, &hidden, ex.dec_in.len());
    for row in log_probs.chunks_exact_mut(layout.tgt_vocab) {
        log_softmax_row(row);
    }
    Trace {
        enc,
        enc_norm,
        dec,
        dec_norm,
        hidden,
        log_probs,
    }
}

/// Sum of target negative log-likelihoods, skipping `pad` targets.
pub fn nll_sum<T: Scalar>(log_probs: &[T], targets: &[u32], vocab: usize, pad: u32) -> (T, usize) {
    let mut total = T::zero();
    let mut count = 0;
    for (row, &t) in log_probs.chunks_exact(vocab).zip(targets) {
        if t != pad {
            total -= row[t as usize];
            count += 1;
        }
    }
    (total, count)
}

/// Backpropagates `scale * sum NLL` and accumulates into `g`.
pub fn backward<T: Scalar>(
    layout: &Layout,
    p: &[T],
    g: &mut [T],
    ex: &Example<T>,
    trace: &Trace<T>,
    scale: T,
    pad: u32,
) {
    let d = layout.d_model;
    let v = layout.tgt_vocab;
    let mut dlogits = vec![T::zero(); trace.log_probs.len()];
    for ((drow, lrow), &t) in dlogits
        .chunks_exact_mut(v)
        .zip(trace.log_probs.chunks_exact(v))
        .zip(&ex.dec_out)
    {
        if t == pad {
            continue;
        }
        for (dv, &lp) in drow.iter_mut().zip(lrow) {
            *dv = lp.exp() * scale;
        }
        drow[t as usize] -= scale;
    }
    let dh = layout.out.backward(p, g, &trace.hidden, &dlogits, ex.dec_in.len());
    let mut dz = layout.dec_norm.backward(p, g, &trace.dec_norm, &dh);
    let mut dmem = vec![T::zero(); ex.src.len() * d];
    for (l, t) in layout.decoder.iter().zip(&trace.dec).rev() {
        let df = undrop(&dz, &t.drop3);
        let dc = l.ffn.backward(p, g, &t.ffn, &df);
        add_into(&mut dz, &l.ln3.backward(p, g, &t.ln3, &dc));

        let dy = undrop(&dz, &t.drop2);
        let (db, dm) = l.cross.backward(p, g, &t.cross, &dy);
        add_into(&mut dmem, &dm);
        add_into(&mut dz, &l.ln2.backward(p, g, &t.ln2, &db));

        let dy = undrop(&dz, &t.drop1);
        let (mut da, da_kv) = l.self_attn.backward(p, g, &t.self_attn, &dy);
        add_into(&mut da, &da_kv);
        add_into(&mut dz, &l.ln1.backward(p, g, &t.ln1, &da));
    }
    scatter_embedding(g, layout.tgt_emb, &ex.dec_in, &dz, d);

    let mut dx = layout.enc_norm.backward(p, g, &trace.enc_norm, &dmem);
    for (l, t) in layout.encoder.iter().zip(&trace.enc).rev() {
        let df = undrop(&dx, &t.drop2);
        let db = l.ffn.backward(p, g, &t.ffn, &df);
        add_into(&mut dx, &l.ln2.backward(p, g, &t.ln2, &db));

        let dy = undrop(&dx, &t.drop1);
        let (mut da, da_kv) = l.attn.backward(p, g, &t.attn, &dy);
        add_into(&mut da, &da_kv);
        add_into(&mut dx, &l.ln1.backward(p, g, &t.ln1, &da));
    }
    scatter_embedding(g, layout.src_emb, &ex.src, &dx, d);
}

fn scatter_embedding<T: Scalar>(g: &mut [T], base: usize, ids: &[u32], dx: &[T], d: usize) {
    let scale = c::<T>(d as f64).sqrt();
    for (row, &id) in dx.chunks_exact(d).zip(ids) {
        let start = base + id as usize * d;
        for (gv, &v) in g[start..start + d].iter_mut().zip(row) {
            *gv += v * scale;
        }
    }
}
