use std::fs;
use std::io::BufReader;
use std::path::Path;

use anyhow::anyhow;
use serde::{Deserialize, Serialize};
use serde_json::json;

use treecode::automaton::DecoderState;
use treecode::experiment::{self, predict_all};
use treecode::metrics::evaluate as score_tokens;
use treecode::model::{BeamOptions, Checkpoint, ModelConfig, PositionalMode};
use treecode::toy::{self, ToyConfig};
use treecode::tree_encoding::{EncodingConfig, EncodingMatrix};
use treecode::typed_tree::{read_corpus, write_corpus};
use treecode::vocab::TargetVocab;
use treecode::{edge_paths, AstToken, GrammarGraph, Sample, TypedTree};

use crate::manifest::Recorder;
use crate::{
    EncodeArgs, EvaluateArgs, Failure, GenToyArgs, InduceArgs, PathsArgs, PredictArgs,
    RoundtripArgs, TrainArgs, VocabArgs,
};

type Outcome = Result<(), Failure>;

fn invalid(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Validation(e.into())
}

fn read(rec: &mut Recorder, path: &Path) -> Result<String, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::Io(anyhow!("{}: {e}", path.display())))?;
    rec.input(path, &bytes);
    String::from_utf8(bytes).map_err(|e| invalid(anyhow!("{}: {e}", path.display())))
}

fn write(rec: &mut Recorder, path: &Path, contents: &[u8]) -> Outcome {
    fs::write(path, contents).map_err(|e| Failure::Io(anyhow!("{}: {e}", path.display())))?;
    rec.output(path);
    Ok(())
}

fn load_corpus(rec: &mut Recorder, path: &Path) -> Result<Vec<Sample>, Failure> {
    let text = read(rec, path)?;
    let samples = read_corpus(BufReader::new(text.as_bytes()))
        .map_err(|e| invalid(anyhow!("{}: {e}", path.display())))?;
    if samples.is_empty() {
        return Err(invalid(anyhow!("{}: corpus is empty", path.display())));
    }
    Ok(samples)
}

fn load_grammar(rec: &mut Recorder, path: &Path) -> Result<GrammarGraph, Failure> {
    let text = read(rec, path)?;
    GrammarGraph::from_json(&text).map_err(|e| invalid(anyhow!("{}: {e}", path.display())))
}

fn load_vocab(rec: &mut Recorder, path: &Path) -> Result<TargetVocab, Failure> {
    let text = read(rec, path)?;
    TargetVocab::from_json(&text).map_err(|e| invalid(anyhow!("{}: {e}", path.display())))
}

fn positional(name: &str) -> Result<PositionalMode, Failure> {
    name.parse::<PositionalMode>().map_err(|e| invalid(anyhow!("{e}")))
}

pub fn gen_toy(a: &GenToyArgs, rec: &mut Recorder) -> Outcome {
    rec.phase("generate");
    let cfg = ToyConfig {
        max_statements: a.max_statements,
        max_targets: a.max_targets,
        max_args: a.max_args,
    };
    if a.n == 0 || cfg.max_statements == 0 || cfg.max_targets == 0 {
        return Err(invalid(anyhow!("--n, --max-statements and --max-targets must be positive")));
    }
    let samples = toy::generate(a.n, a.seed, cfg);
    let mut buf = Vec::new();
    write_corpus(&mut buf, &samples).map_err(invalid)?;
    write(rec, &a.out, &buf)?;
    println!("wrote {} samples to {}", samples.len(), a.out.display());
    rec.results(json!({ "samples": samples.len() }));
    Ok(())
}

pub fn induce(a: &InduceArgs, rec: &mut Recorder) -> Outcome {
    let samples = load_corpus(rec, &a.corpus)?;
    rec.phase("induce");
    let g = GrammarGraph::induce(samples.iter().map(|s| &s.tree)).map_err(invalid)?;
    write(rec, &a.out, g.to_json().as_bytes())?;
    let s = g.stats();
    println!("object types     {}", s.object_types);
    println!("attributes       {}", s.attributes);
    println!("owner edges      {}", s.owner_edges);
    println!("child edges      {}", s.child_edges);
    rec.results(json!({
        "object_types": s.object_types,
        "attributes": s.attributes,
        "owner_edges": s.owner_edges,
        "child_edges": s.child_edges,
    }));
    Ok(())
}

/// First problem found with one sample, if any.
fn check_sample(tree: &TypedTree, g: &GrammarGraph, path_len: usize) -> Option<String> {
    let tokens = tree.linearize();
    match TypedTree::delinearize(&tokens, g) {
        Ok(back) if &back == tree => {}
        Ok(_) => return Some("delinearize produced a different tree".into()),
        Err(e) => return Some(format!("delinearize failed: {e}")),
    }
    let verdict = g.accepts(tree);
    if !verdict.accepted {
        let why = verdict.violation.map(|v| v.to_string()).unwrap_or_default();
        return Some(format!("grammar rejects the tree: {why}"));
    }
    let paths = match edge_paths(tree, path_len) {
        Ok(p) => p,
        Err(e) => return Some(e.to_string()),
    };
    let mut state = DecoderState::initial();
    for (i, (t, want)) in tokens.iter().zip(&paths).enumerate() {
        match state.next_edge_path(path_len) {
            Ok(got) if &got == want => {}
            Ok(got) => return Some(format!("token {i}: incremental path {got} != {want}")),
            Err(e) => return Some(format!("token {i}: {e}")),
        }
        if let Err(e) = state.advance(t, g) {
            return Some(format!("token {i}: {e}"));
        }
    }
    if !state.is_finished() {
        return Some("automaton did not reach the finished state".into());
    }
    None
}

pub fn roundtrip(a: &RoundtripArgs, rec: &mut Recorder) -> Outcome {
    let samples = load_corpus(rec, &a.corpus)?;
    let g = load_grammar(rec, &a.grammar)?;
    rec.phase("check");
    let failures: Vec<(usize, String)> = samples
        .iter()
        .enumerate()
        .filter_map(|(i, s)| check_sample(&s.tree, &g, a.path_len).map(|why| (i, why)))
        .collect();
    for (i, why) in &failures {
        println!("sample {i}: {why}");
    }
    let passed = samples.len() - failures.len();
    println!("{passed}/{} samples pass", samples.len());
    let report = json!({
        "samples": samples.len(),
        "passed": passed,
        "failures": failures.iter().map(|(i, w)| json!({"sample": i, "reason": w})).collect::<Vec<_>>(),
    });
    if let Some(out) = &a.out {
        write(rec, out, (serde_json::to_string_pretty(&report).unwrap() + "\n").as_bytes())?;
    }
    rec.results(report);
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verification(format!("{} of {} samples failed", failures.len(), samples.len())))
    }
}

#[derive(Serialize)]
struct PathRow<'a> {
    sample: usize,
    position: usize,
    token: &'a AstToken,
    path: &'a [u32],
}

pub fn paths(a: &PathsArgs, rec: &mut Recorder) -> Outcome {
    let samples = load_corpus(rec, &a.corpus)?;
    rec.phase("paths");
    let mut out = String::new();
    for (i, s) in samples.iter().enumerate() {
        let tokens = s.tree.linearize();
        let paths = edge_paths(&s.tree, a.path_len).map_err(|e| invalid(anyhow!("sample {i}: {e}")))?;
        for (j, (t, p)) in tokens.iter().zip(&paths).enumerate() {
            let row = PathRow { sample: i, position: j, token: t, path: p.indices() };
            out.push_str(&serde_json::to_string(&row).unwrap());
            out.push('\n');
        }
    }
    write(rec, &a.out, out.as_bytes())
}

pub fn encode(a: &EncodeArgs, rec: &mut Recorder) -> Outcome {
    let samples = load_corpus(rec, &a.corpus)?;
    let sample = samples
        .get(a.sample)
        .ok_or_else(|| invalid(anyhow!("sample {} out of range ({} records)", a.sample, samples.len())))?;
    rec.phase("encode");
    let cfg = EncodingConfig::new(a.d_idx, a.path_len).map_err(invalid)?;
    let matrix = match positional(&a.positional)? {
        PositionalMode::Tree => {
            let paths = edge_paths(&sample.tree, a.path_len).map_err(invalid)?;
            EncodingMatrix::from_paths(&paths, &cfg).map_err(invalid)?
        }
        PositionalMode::Sequential => EncodingMatrix::sequential(sample.tree.linearize().len(), cfg.d_model()),
    };
    write(rec, &a.out, matrix.to_csv().as_bytes())
}

pub fn vocab(a: &VocabArgs, rec: &mut Recorder) -> Outcome {
    let samples = load_corpus(rec, &a.corpus)?;
    rec.phase("train");
    let v = TargetVocab::train(&samples, a.size).map_err(invalid)?;
    write(rec, &a.out, v.to_json().as_bytes())?;
    println!(
        "ast ids {}, subword ids {}, target ids {}",
        v.ast.len(),
        v.subword.len(),
        v.len()
    );
    rec.results(json!({ "ast": v.ast.len(), "subword": v.subword.len(), "target": v.len() }));
    Ok(())
}

pub fn train(a: &TrainArgs, rec: &mut Recorder) -> Outcome {
    let samples = load_corpus(rec, &a.corpus)?;
    let v = load_vocab(rec, &a.vocab)?;
    let config = ModelConfig {
        d_model: a.d_idx * a.path_len,
        heads: a.heads,
        encoder_layers: a.encoder_layers,
        decoder_layers: a.decoder_layers,
        ffn_dim: a.ffn_dim,
        d_idx: a.d_idx,
        path_len: a.path_len,
        dropout: a.dropout,
        positional: positional(&a.positional)?,
        learning_rate: a.learning_rate,
        batch_size: a.batch_size,
    };
    config.validate().map_err(invalid)?;
    rec.phase("train");
    let mut losses = Vec::with_capacity(a.epochs);
    let model = experiment::train(config, &v, &samples, a.epochs, a.seed, |s| {
        println!("epoch {:>4}  loss {:.6}", s.epoch, s.mean_loss);
        losses.push(s.mean_loss);
    })
    .map_err(invalid)?;
    rec.phase("save");
    write(rec, &a.checkpoint, Checkpoint::from_model(&model).to_json().as_bytes())?;
    rec.results(json!({ "epochs": a.epochs, "final_loss": losses.last(), "losses": losses }));
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct PredictionRecord {
    nl: String,
    tokens: Vec<AstToken>,
    #[serde(default)]
    finished: bool,
    #[serde(default)]
    well_formed: bool,
    #[serde(default)]
    accepted: bool,
    #[serde(default)]
    score: Option<f64>,
}

pub fn predict(a: &PredictArgs, rec: &mut Recorder) -> Outcome {
    let samples = load_corpus(rec, &a.corpus)?;
    let v = load_vocab(rec, &a.vocab)?;
    let g = load_grammar(rec, &a.grammar)?;
    let text = read(rec, &a.checkpoint)?;
    let model = Checkpoint::from_json(&text)
        .and_then(Checkpoint::into_model)
        .map_err(|e| invalid(anyhow!("{}: {e}", a.checkpoint.display())))?;
    if let Some(p) = &a.positional {
        let want = positional(p)?;
        if want != model.config().positional {
            return Err(invalid(anyhow!(
                "--positional {want} but the checkpoint was trained with {}",
                model.config().positional
            )));
        }
    }
    let opts = BeamOptions { beams: a.beams, max_len: a.max_len, constrained: a.constrained };
    rec.phase("decode");
    let nls: Vec<&str> = samples.iter().map(|s| s.nl.as_str()).collect();
    let preds = predict_all(&model, &v, &g, &nls, &opts).map_err(invalid)?;
    let mut out = String::new();
    for (nl, p) in nls.iter().zip(&preds) {
        let r = PredictionRecord {
            nl: nl.to_string(),
            tokens: p.tokens.clone(),
            finished: p.finished,
            well_formed: p.well_formed,
            accepted: p.accepted,
            score: p.score.is_finite().then_some(p.score),
        };
        out.push_str(&serde_json::to_string(&r).unwrap());
        out.push('\n');
    }
    write(rec, &a.out, out.as_bytes())?;
    let accepted = preds.iter().filter(|p| p.accepted).count();
    let finished = preds.iter().filter(|p| p.finished).count();
    println!("{} inputs, {finished} finished, {accepted} grammar-accepted", preds.len());
    rec.results(json!({ "inputs": preds.len(), "finished": finished, "accepted": accepted }));
    if a.constrained && accepted < preds.len() {
        return Err(Failure::Verification(format!(
            "{} of {} constrained outputs are not grammar-accepted",
            preds.len() - accepted,
            preds.len()
        )));
    }
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs, rec: &mut Recorder) -> Outcome {
    let text = read(rec, &a.predictions)?;
    let mut preds = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let r: PredictionRecord = serde_json::from_str(line)
            .map_err(|e| invalid(anyhow!("{} line {}: {e}", a.predictions.display(), i + 1)))?;
        preds.push(r.tokens);
    }
    let refs: Vec<Vec<AstToken>> = load_corpus(rec, &a.corpus)?.iter().map(|s| s.tree.linearize()).collect();
    rec.phase("score");
    let report = score_tokens(&preds, &refs, a.mask_literals).map_err(invalid)?;
    let table = report.to_string();
    print!("{table}");
    write(rec, &a.out, (serde_json::to_string_pretty(&report).unwrap() + "\n").as_bytes())?;
    let mut txt = a.out.as_os_str().to_owned();
    txt.push(".txt");
    write(rec, Path::new(&txt), table.as_bytes())?;
    rec.results(serde_json::to_value(report).unwrap());
    Ok(())
}
