"""Print BER rows of several ber.csv files side by side, with ratios to the first."""
import argparse

from nfdm_ae.persist import read_csv
from nfdm_ae.receiver_nft import binomial_interval


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("files", nargs="+", help="ber.csv files; the first is the reference")
    args = ap.parse_args()
    tables = []
    for path in args.files:
        _, header, rows = read_csv(path)
        tables.append({r[0]: dict(zip(header, r)) for r in rows})
    ref = tables[0]
    for path, t in zip(args.files, tables):
        print(path)
        for d, r in sorted(t.items()):
            lo, hi = binomial_interval(r["n_errors"], r["n_bits"])
            line = f"  {d:4d} spans  BER {r['ber']:.3e}  95% [{lo:.2e}, {hi:.2e}]"
            if d in ref and r["ber"] > 0:
                line += f"  ref/this {ref[d]['ber'] / r['ber']:.1f}"
            elif d in ref and ref[d]["ber"] > 0:
                line += "  ref/this inf"
            print(line)


if __name__ == "__main__":
    main()
