//! Generates the synthetic egocentric world, writes it to a container and
//! reads it back, then prints label statistics.

use ego_interact::data::{generate_synthetic_world, read_dataset, write_dataset, WorldConfig};

fn main() {
    let cfg = WorldConfig { num_sequences: 200, image_size: 16, ..Default::default() };
    let ds = generate_synthetic_world(&cfg, 7).expect("valid config");
    let dir = std::env::temp_dir().join("ego-interact-world");
    write_dataset(&ds, &dir).expect("writable temp dir");
    assert_eq!(read_dataset(&dir).expect("readable"), ds);
    println!("{} sequences of {} frames at {}px in {}", ds.len(), ds.seq_len, ds.image_size, dir.display());

    let mut scenes = [0usize; 3];
    let mut moving = [0usize; 6];
    let mut masked = 0;
    for s in &ds.sequences {
        scenes[s.meta.scene_class()] += 1;
        for (i, (&l, &m)) in s.movement.labels.iter().zip(&s.movement.mask).enumerate() {
            moving[i % 6] += usize::from(l == 1 && m);
            masked += usize::from(!m);
        }
    }
    println!("scene classes {scenes:?}");
    println!("moving frames per part {moving:?}, gray or missing entries {masked}");
    let valid = ds.sequences.iter().flat_map(|s| &s.gaze_valid).filter(|&&v| v).count();
    println!("valid gaze frames {valid}/{}", ds.len() * ds.seq_len);
}
