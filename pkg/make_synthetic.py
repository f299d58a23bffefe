import sys
import touchtools as tt

if __name__ == "__main__":
    if len(sys.argv) < 2:
        print("Usage: python make_synthetic.py <OUT.csv> [SEED]")
        sys.exit(1)

    out = sys.argv[1]
    seed = int(sys.argv[2]) if len(sys.argv) > 2 else None

    samples = tt.gen_dataset(n_users=8, samples_per_user=40,
                             seed=tt.resolve_seed(seed), print_msg=True)
    tt.write_gesture_csv(samples, out)
    print(out)
