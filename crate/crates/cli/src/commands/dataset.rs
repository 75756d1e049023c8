use coordconv_core::dataset::{
    dataset_hash, generate_dataset, make_split, split_sum_images, write_dataset, write_pgm, write_split, SplitKind,
    CANVAS,
};

use crate::error::CliResult;
use crate::files;
use crate::DatasetArgs;

pub const DATASET_FILE: &str = "not-so-clevr.bin";

pub fn split_file_name(kind: SplitKind) -> String {
    format!("split-{kind}.bin")
}

pub fn run(args: &DatasetArgs) -> CliResult<()> {
    files::ensure_dir(&args.out)?;
    let dataset = generate_dataset();
    let path = args.out.join(DATASET_FILE);
    files::write_with(&path, |out| write_dataset(out, &dataset))?;
    println!("{} examples -> {} (sha256 {})", dataset.len(), path.display(), dataset_hash(&dataset));

    for kind in [SplitKind::Uniform, SplitKind::Quadrant] {
        let split = make_split(kind, args.seed);
        let path = args.out.join(split_file_name(kind));
        files::write_with(&path, |out| write_split(out, &split))?;
        println!("{kind}: {} train / {} test -> {}", split.train.len(), split.test.len(), path.display());

        let sums = split_sum_images(&dataset, &split);
        for (half, kind_name, values) in [
            ("train", "onehot", &sums.train_onehot),
            ("train", "image", &sums.train_image),
            ("test", "onehot", &sums.test_onehot),
            ("test", "image", &sums.test_image),
        ] {
            let path = args.out.join(format!("sum-{kind}-{half}-{kind_name}.pgm"));
            files::write_with(&path, |out| write_pgm(out, CANVAS, CANVAS, values))?;
        }
    }
    println!("8 split-sum images -> {}", args.out.display());
    Ok(())
}
