import sys
import touchtools as tt

if __name__ == "__main__":
    if len(sys.argv) < 3:
        print("Usage: python pretrain_default.py <DATA.csv> <OUT.tsqn>")
        sys.exit(1)

    data, out = sys.argv[1], sys.argv[2]
    cfg = tt.make_config()

    samples = tt.preprocess_samples(tt.load_gesture_csv(data), cfg.window,
                                    threads=cfg.threads)
    result = tt.run_pretraining(samples, cfg, seed=tt.resolve_seed())
    tt.save_checkpoint(tt.with_meta(result.params, cfg), out)
    print(out)
