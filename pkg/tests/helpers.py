"""Shared workflow driver for the CLI tests and the determinism criterion."""
import os

from ppgvc.cli import main

NET = ["--set", "network.hidden=" + ",".join(["128"] * 6), "--set", "train.epochs=40"]
SMALL_NET = ["--set", "network.hidden=32", "--set", "train.epochs=3"]


def run(*argv):
    code = main([str(a) for a in argv])
    if code != 0:
        raise AssertionError(f"ppgvc {' '.join(map(str, argv))} exited with {code}")


def full_chain(root, net=NET, seed=7, utts=20, jobs=1):
    """oracle-gen -> extract -> train -> convert -> eval -> synth -> train-gan, all under ``root``."""
    root = str(root)
    c = os.path.join(root, "corpus")
    run("oracle-gen", "--out", c, "--utts", utts, "--dims", "64,64,64", "--seed", seed, "--heldout", 4)
    run("extract", "--manifest", os.path.join(c, "manifest.tsv"), "--cache", os.path.join(root, "cache"),
        "--jobs", jobs)
    run("train", "--manifest", os.path.join(c, "train.tsv"), "--cache", os.path.join(root, "cache"),
        "--out", os.path.join(root, "model", "vc.ckpt"), *net)
    run("convert", "--ckpt", os.path.join(root, "model", "vc.ckpt"), "--manifest", os.path.join(c, "heldout.tsv"),
        "--out", os.path.join(root, "conv"), "--jobs", jobs)
    run("eval", "--pred", os.path.join(root, "conv", "manifest.tsv"), "--ref", os.path.join(c, "truth.tsv"),
        "--out", os.path.join(root, "report", "heldout"))
    first = sorted(os.listdir(os.path.join(root, "conv", "params")))[0]
    run("synth", "--params", os.path.join(root, "conv", "params", first),
        "--out", os.path.join(root, "synth", first.replace(".prm", ".wav")))
    run("train-gan", "--gen", os.path.join(c, "truth.tsv"), "--target", os.path.join(root, "conv", "manifest.tsv"),
        "--out", os.path.join(root, "model", "gan.ckpt"), "--set", "gan.window_frames=16",
        "--set", "gan.disc_hidden=16", "--set", "network.hidden=16", "--set", "train.epochs=2")
    return root


def tree(root):
    """``{relative path: bytes}`` for every file under ``root``."""
    out = {}
    for dp, _, files in os.walk(root):
        for f in files:
            p = os.path.join(dp, f)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, root)] = fh.read()
    return out
