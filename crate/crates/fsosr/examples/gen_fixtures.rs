//! Regenerates the synthetic fixtures under `crates/fsosr/fixtures/`.
//!
//! ```text
//! cargo run -p fsosr --example gen_fixtures -- crates/fsosr/fixtures
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use fsosr_core::dataset::{EmbeddingDataset, View};
use fsosr_core::recognizer::Truth;
use fsosr_core::synth::{Task, TaskSpec};

const SEED: u64 = 7;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "crates/fsosr/fixtures".into()),
    );
    fs::create_dir_all(&dir)?;
    let task = Task::new(TaskSpec::default(), SEED);

    let pool = task.known_split(20, 0)?;
    fsosr::emb::save_embeddings(&pool, &dir.join("pool.emb"), None, None)?;
    let ctx = task.context_view(&pool, 0)?;
    fsosr::emb::save_embeddings(&ctx, &dir.join("ctx.emb"), None, None)?;

    let (test, truths) = task.open_set_split(20, 20, 1)?;
    fsosr::emb::write_matrix(&dir.join("test.emb"), &test)?;
    let names = task.all_class_names();
    let mut csv = String::from("index,label_id,class_name\n");
    for (i, t) in truths.iter().enumerate() {
        let (id, name) = match *t {
            Truth::Known { class, .. } => (class as i64, &names[class as usize]),
            Truth::Unknown { fallback_class } => (
                -1,
                &names[fallback_class.expect("synthetic unknowns are named")],
            ),
        };
        writeln!(csv, "{i},{id},{name}")?;
    }
    fs::write(dir.join("test.csv"), csv)?;

    let fb = EmbeddingDataset::new(
        task.centers.clone(),
        (0..names.len() as u32).collect(),
        names,
        View::Full,
    )?;
    fsosr::emb::save_embeddings(&fb, &dir.join("fb.emb"), None, None)?;

    fs::write(
        dir.join("run.cfg"),
        "# synthetic fixture run; optimizer settings are the defaults\n\
         k = 4\nbeta = 8\ngamma = 96\nthreshold = 0.5\nseed = 7\n\
         lr_main = 5e-5\nlr_classifier = 1e-4\nbatch_size = 32\nweight_decay = 1e-5\n\
         epochs = 17\nstage1_epochs = 4\nlr_decay_epoch = 8\nlr_decay_factor = 0.1\n",
    )?;
    println!("fixtures written to {}", dir.display());
    Ok(())
}
