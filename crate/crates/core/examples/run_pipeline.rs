use excitation_id::pipeline::{Pipeline, PipelineConfig, Stage};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = PipelineConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/two_link_pipeline.json"))?;
    cfg.output_dir = std::env::temp_dir().join("exid_example_pipeline");
    let pipeline = Pipeline::new(cfg)?;
    for stage in Stage::ALL {
        let out = pipeline.run(stage)?;
        println!("{:<12} {}", stage.name(), out.artifacts.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "));
    }
    let report = std::fs::read_to_string(pipeline.cfg.output_dir.join("report.json"))?;
    println!("{report}");
    Ok(())
}
