use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use parrot_core::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use parrot_core::data::{load_feature_table, pair, synth_generate, write_feature_table, PairedDataset, SynthConfig};
use parrot_core::nn::Tensor2;
use parrot_core::ot::{sinkhorn, CostMatrix, SinkhornConfig};
use parrot_core::train::{cross_validate, evaluate, fit, Metrics};
use serde::Serialize;

use crate::args::{Command, CvArgs, EvalArgs, InputArgs, InspectArgs, SinkhornArgs, SynthArgs, TrainArgs};
use crate::CliError;

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Cv(a) => cv(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Inspect(a) => inspect(a),
        Command::Sinkhorn(a) => sinkhorn_cmd(a),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))
}

fn load_pair(input: &InputArgs) -> Result<PairedDataset, CliError> {
    let p = load_feature_table(&input.ptm_a)?;
    let q = load_feature_table(&input.ptm_b)?;
    Ok(pair(&p, &q)?)
}

fn synth(a: SynthArgs) -> Result<(), CliError> {
    if a.classes < 2 {
        return Err(CliError::usage(format!("--classes must be at least 2, got {}", a.classes)));
    }
    if a.per_class == 0 || a.dims.0 == 0 || a.dims.1 == 0 {
        return Err(CliError::usage("--per-class and --dims must be positive"));
    }
    if !(a.gap.is_finite() && a.gap >= 0.0) {
        return Err(CliError::usage(format!("--gap must be >= 0, got {}", a.gap)));
    }
    let (p, q) = synth_generate(&SynthConfig::new(a.classes, a.per_class, a.dims, a.gap, a.seed))?;
    ensure_dir(&a.out)?;
    for (table, file) in [(&p, "synth-a.pfv"), (&q, "synth-b.pfv")] {
        let path = a.out.join(file);
        write_feature_table(table, &path)?;
        println!("wrote {} ({} rows, dim {})", path.display(), table.len(), table.dim());
    }
    for (name, count) in p.class_names().iter().zip(p.class_counts()) {
        println!("  {name}: {count}");
    }
    Ok(())
}

#[derive(Serialize)]
struct RunMeta {
    wall_time_secs: f64,
    jobs: usize,
    version: &'static str,
}

fn cv(a: CvArgs) -> Result<(), CliError> {
    a.model.validate()?;
    if a.folds < 2 {
        return Err(CliError::usage(format!("--folds must be at least 2, got {}", a.folds)));
    }
    if a.jobs == 0 {
        return Err(CliError::usage("--jobs must be at least 1"));
    }
    let dataset = load_pair(&a.input)?;
    let arch = a.model.arch(dataset.dims(), dataset.classes());
    ensure_dir(&a.out)?;
    let started = Instant::now();
    let report = cross_validate(&dataset, arch, &a.model.train_config(), a.folds, a.jobs)?;
    let meta = RunMeta {
        wall_time_secs: started.elapsed().as_secs_f64(),
        jobs: a.jobs,
        version: env!("CARGO_PKG_VERSION"),
    };
    write_file(&a.out.join("report.json"), report.to_json())?;
    write_file(&a.out.join("folds.csv"), report.folds_csv())?;
    write_file(&a.out.join("confusion.csv"), report.confusion_csv())?;
    write_file(
        &a.out.join("run-meta.json"),
        serde_json::to_string_pretty(&meta).expect("plain struct") + "\n",
    )?;
    print!("{}", report.summary_table());
    println!("reports in {}", a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    a.model.validate()?;
    let dataset = load_pair(&a.input)?;
    let arch = a.model.arch(dataset.dims(), dataset.classes());
    ensure_dir(&a.out)?;
    let config = a.model.train_config();
    let rows: Vec<usize> = (0..dataset.len()).collect();
    let (model, summary) = fit(&dataset, arch, &rows, &config, config.seed)?;
    let meta = CheckpointMeta {
        seed: config.seed,
        ptm_a: dataset.table_p().ptm_name().to_string(),
        ptm_b: dataset.table_q().ptm_name().to_string(),
        class_names: dataset.class_names().to_vec(),
    };
    let path = a.out.join("model.prrt");
    save_checkpoint(&model, &meta, &path)?;
    write_file(
        &a.out.join("training.json"),
        serde_json::to_string_pretty(&summary.history).expect("plain records") + "\n",
    )?;
    println!(
        "trained {} on {} rows ({} held out for early stopping): {} epochs, best epoch {}, validation loss {:.4}",
        arch.fusion, summary.train_size, summary.validation_size, summary.epochs_ran, summary.best_epoch, summary.best_loss
    );
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    samples: usize,
    loss: f64,
    #[serde(flatten)]
    metrics: &'a Metrics,
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    if a.batch == 0 {
        return Err(CliError::usage("--batch must be positive"));
    }
    let (mut model, meta) = load_checkpoint(&a.checkpoint)?;
    let dataset = load_pair(&a.input)?;
    let arch = *model.arch();
    for (flag, expected, got) in [("--ptm-a", arch.dim_p, dataset.dims().0), ("--ptm-b", arch.dim_q, dataset.dims().1)] {
        if expected != got {
            return Err(CliError::data(format!(
                "{flag} dimension mismatch: checkpoint expects {expected}, file has {got}"
            )));
        }
    }
    if meta.class_names != dataset.class_names() {
        return Err(CliError::data(format!(
            "class lists differ: checkpoint {:?}, data {:?}",
            meta.class_names,
            dataset.class_names()
        )));
    }
    ensure_dir(&a.out)?;
    let rows: Vec<usize> = (0..dataset.len()).collect();
    let result = evaluate(&mut model, &dataset, &rows, a.batch, a.export_penultimate)?;
    let out = EvalOutput {
        samples: rows.len(),
        loss: result.loss,
        metrics: &result.metrics,
    };
    write_file(
        &a.out.join("metrics.json"),
        serde_json::to_string_pretty(&out).expect("plain struct") + "\n",
    )?;
    if let Some(hidden) = &result.penultimate {
        write_file(&a.out.join("penultimate.csv"), penultimate_csv(&dataset, hidden))?;
    }
    println!(
        "accuracy {:.2}%  macro-F1 {:.2}%  ({} samples)",
        100.0 * result.metrics.accuracy,
        100.0 * result.metrics.macro_f1,
        rows.len()
    );
    Ok(())
}

fn penultimate_csv(dataset: &PairedDataset, hidden: &Tensor2) -> String {
    let mut out = String::from("id,label");
    for j in 0..hidden.cols() {
        let _ = write!(out, ",h{j}");
    }
    out.push('\n');
    for i in 0..hidden.rows() {
        out.push_str(&dataset.utterance_ids()[i]);
        out.push(',');
        out.push_str(&dataset.class_names()[dataset.labels()[i]]);
        for v in hidden.row(i) {
            let _ = write!(out, ",{v:?}");
        }
        out.push('\n');
    }
    out
}

fn inspect(a: InspectArgs) -> Result<(), CliError> {
    let (model, meta) = load_checkpoint(&a.checkpoint)?;
    let arch = model.arch();
    let ledger = arch.ledger();
    println!("fusion        {}", arch.fusion);
    println!("streams       {} ({}) + {} ({})", meta.ptm_a, arch.dim_p, meta.ptm_b, arch.dim_q);
    println!("classes       {}", meta.class_names.join(", "));
    println!(
        "encoder       conv{}x{} -> pool{} -> conv{}x{} -> pool{} -> dense {}",
        arch.conv1_filters, arch.kernel_size, arch.pool_window, arch.conv2_filters, arch.kernel_size, arch.pool_window, arch.latent_dim
    );
    println!(
        "fused width   {} (ot {}, hadamard {})",
        ledger.fused_width, ledger.ot_width, ledger.hp_width
    );
    println!("head          {} -> {} -> {}", ledger.fused_width, arch.hidden_dim, arch.classes);
    println!("dropout       {}", arch.dropout);
    println!(
        "sinkhorn      epsilon {} iters {} tol {:e}",
        arch.sinkhorn.epsilon, arch.sinkhorn.max_iters, arch.sinkhorn.tol
    );
    println!("seed          {}", meta.seed);
    println!("parameters    {}", model.params().scalar_count());
    for p in model.params().iter() {
        println!("  {:<24} {:>6} x {:<6}", p.name, p.value.rows(), p.value.cols());
    }
    Ok(())
}

fn read_cost_csv(path: &Path) -> Result<Tensor2, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .enumerate()
            .map(|(j, cell)| {
                cell.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| CliError::data(format!("line {}, cell {}: `{}` is not a finite number", i + 1, j + 1, cell.trim())))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::data("cost matrix is empty"));
    }
    Tensor2::from_rows(&rows).map_err(|e| CliError::data(format!("ragged cost matrix: {e}")))
}

fn sinkhorn_cmd(a: SinkhornArgs) -> Result<(), CliError> {
    if !(a.epsilon.is_finite() && a.epsilon > 0.0) {
        return Err(CliError::usage(format!("--epsilon must be positive, got {}", a.epsilon)));
    }
    if !(a.tol.is_finite() && a.tol > 0.0) {
        return Err(CliError::usage(format!("--tol must be positive, got {}", a.tol)));
    }
    let cost = CostMatrix::from_tensor(read_cost_csv(&a.cost)?)?;
    let plan = sinkhorn(
        &cost,
        &SinkhornConfig {
            epsilon: a.epsilon,
            max_iters: a.iters,
            tol: a.tol,
        },
    )?;
    println!("plan ({}x{}):", plan.gamma.rows(), plan.gamma.cols());
    for r in 0..plan.gamma.rows() {
        let cells: Vec<String> = plan.gamma.row(r).iter().map(|v| format!("{v:.6}")).collect();
        println!("  {}", cells.join(" "));
    }
    let err = plan.marginal_violation();
    println!("row marginal error    {:.1e}", err.rows);
    println!("column marginal error {:.1e}", err.cols);
    println!("iterations {}  converged {}", plan.iterations_used, plan.converged);
    if plan.converged {
        Ok(())
    } else {
        Err(CliError {
            code: CliError::NUMERICAL,
            message: String::new(),
        })
    }
}
