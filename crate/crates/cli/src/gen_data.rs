use std::fs;
use std::path::Path;

use anyhow::Result;
use ilm::tasks::{write_records, RecordManifest, TaskSpec};
use log::info;

use crate::data::{TaskFile, TASK_FILE, VOCAB_FILE};
use crate::GenDataArgs;

pub fn run(run_root: &Path, a: GenDataArgs) -> Result<()> {
    let mut spec = TaskSpec::by_name(&a.task)?;
    if let Some(s) = a.seed {
        spec.set_seed(s);
    }
    spec.set_sizes(a.n_train, a.n_test);
    let out = a.out_dir.unwrap_or_else(|| run_root.join("data").join(format!("{}-s{}", a.task, spec.seed())));
    if out.exists() {
        let non_empty = fs::read_dir(&out).map_err(|e| ilm::Error::io(&out, e))?.next().is_some();
        if non_empty && !a.force {
            return Err(ilm::Error::invalid(format!(
                "{} exists and is not empty; pass --force to overwrite",
                out.display()
            ))
            .into());
        }
    }
    fs::create_dir_all(&out).map_err(|e| ilm::Error::io(&out, e))?;

    let vocab = spec.vocab();
    vocab.save(&out.join(VOCAB_FILE))?;
    let task = TaskFile { name: a.task.clone(), spec: spec.clone() };
    let task_path = out.join(TASK_FILE);
    fs::write(&task_path, serde_json::to_string_pretty(&task)?).map_err(|e| ilm::Error::io(&task_path, e))?;
    for (split, test) in [("train", false), ("test", true)] {
        let lines = spec.lines(test)?;
        let m = RecordManifest {
            task: a.task.clone(),
            split: split.into(),
            spec: serde_json::to_value(&spec)?,
            seed: spec.seed(),
            count: 0,
            sha256: String::new(),
        };
        let m = write_records(&out.join(format!("{split}.txt")), &lines, m)?;
        info!("{split}: {} records, sha256 {}", m.count, m.sha256);
    }
    println!("{}", out.display());
    Ok(())
}
