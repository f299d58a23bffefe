import sys
import touchtools as tt

if __name__ == "__main__":
    if len(sys.argv) < 3:
        print("Usage: python run_ablation.py <DATA.csv> <PRETRAINED.tsqn> "
              "[CONFIG]")
        sys.exit(1)

    data, pretrained = sys.argv[1], sys.argv[2]
    cfg = tt.make_config(sys.argv[3] if len(sys.argv) > 3 else None)

    samples = tt.preprocess_samples(tt.load_gesture_csv(data), cfg.window,
                                    threads=cfg.threads)
    tensors = tt.load_checkpoint(pretrained)
    tt.ablation_study(samples, cfg, pretrained=tensors)
