"""Command-line pipeline driver.

Stages: normalize -> g2p -> select-prompts -> align -> cut -> split ->
build-voice -> synth -> mcd / cer -> serve. Every stage reads and writes
the plain-text formats documented in the owning modules, so runs are
re-runnable and diffable. Audio input is PCM WAV only; convert compressed
sources (e.g. mp3 chapters) with an external tool first.

Exit codes: 0 success; 2 usage; 3 missing/unreadable input; 4 malformed
data or failed validation of inputs; 5 infeasible computation (too-short
audio, silent recording, unsynthesizable text).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import corpus as corpus_mod
from .aligner import AlignConfig, align_chapter, align_corpus, filter_by_score
from .audio import load_wav, save_wav
from .errors import (
    AudioFormatError,
    DictionaryRangeError,
    InfeasibleAlignmentError,
    ManifestError,
    SilentAudioError,
    SynthesisError,
    TruncatedAudioError,
    VoxkitError,
)
from .evalkit import (
    LENIENT_PROFILE,
    cer,
    mcd_testset,
    significant_difference,
)
from .features import MfccConfig
from .prompts import coverage_report, extract_units, select_prompts
from .synth import (
    SynthWeights,
    batch_synthesize,
    build_unit_index,
    load_index,
    save_index,
    synthesize,
)
from .textnorm import (
    LanguageProfile,
    clean_text,
    g2p,
    load_g2p_table,
    load_number_dictionary,
    normalize_numbers,
)

EXIT_OK = 0
EXIT_INPUT = 3
EXIT_DATA = 4
EXIT_INFEASIBLE = 5


def _read_config(path: str | None) -> dict[str, str]:
    if not path:
        return {}
    config = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        config[key.strip()] = value.strip()
    return config


def _records_from(path: Path) -> list[tuple[str, str]]:
    records = []
    for line_no, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip() or raw.startswith("#"):
            continue
        record_id, sep, text = raw.partition("\t")
        if not sep:
            raise ValueError(f"{path}:{line_no}: expected id<TAB>text")
        records.append((record_id, text))
    return records


def _emit(args, payload: dict, table: str):
    if getattr(args, "format", "table") == "records":
        print(json.dumps(payload, sort_keys=True, ensure_ascii=False))
    else:
        print(table)


def _jobs(args) -> int:
    return args.jobs if getattr(args, "jobs", 0) else (os.cpu_count() or 1)


# -- subcommand handlers ----------------------------------------------------


def cmd_normalize(args, config):
    dictionary = None
    dict_path = args.numbers or config.get("numbers")
    if dict_path:
        dictionary = load_number_dictionary(dict_path)
    profile = LanguageProfile(strip_punctuation=not args.keep_punctuation)

    def normalize_one(text: str) -> str:
        cleaned = clean_text(text, profile)
        if dictionary is not None:
            cleaned = clean_text(normalize_numbers(cleaned, dictionary), profile)
        return cleaned

    source = Path(args.infile)
    lines = []
    if args.records:
        for record_id, text in _records_from(source):
            lines.append(f"{record_id}\t{normalize_one(text)}")
    else:
        for raw in source.read_text(encoding="utf-8").splitlines():
            lines.append(normalize_one(raw))
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"normalized {len(lines)} lines -> {args.out}")
    return EXIT_OK


def cmd_g2p(args, config):
    table = load_g2p_table(args.table or config["g2p"])
    source = Path(args.infile)
    lines = []
    if args.records:
        for record_id, text in _records_from(source):
            lines.append(f"{record_id}\t{' '.join(g2p(text, table))}")
    else:
        for raw in source.read_text(encoding="utf-8").splitlines():
            lines.append(" ".join(g2p(raw, table)))
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote phones for {len(lines)} lines -> {args.out}")
    return EXIT_OK


def cmd_select_prompts(args, config):
    table = load_g2p_table(args.table or config["g2p"])
    candidates = [
        extract_units(record_id, text, table)
        for record_id, text in _records_from(Path(args.candidates))
    ]
    result = select_prompts(candidates, args.count, args.alpha)
    report = coverage_report(result, candidates)
    with Path(args.out).open("w", encoding="utf-8") as handle:
        by_id = {c.utterance_id: c for c in candidates}
        for selected_id in result.selected_ids:
            handle.write(f"{selected_id}\t{by_id[selected_id].text}\n")
    table_text = (
        f"selected {len(result.selected_ids)} of {len(candidates)} candidates\n"
        f"coverage: {report.covered_count}/{report.pool_type_count} diphone types "
        f"({100.0 * result.coverage_ratio:.1f}%)\n"
        f"duration proxy (phones): {report.duration_proxy_total}"
        + ("\nWARNING: pool smaller than target" if result.shortfall else "")
    )
    _emit(
        args,
        {
            "selected": len(result.selected_ids),
            "pool": len(candidates),
            "covered_types": report.covered_count,
            "pool_types": report.pool_type_count,
            "coverage_ratio": result.coverage_ratio,
            "duration_proxy": report.duration_proxy_total,
            "shortfall": result.shortfall,
        },
        table_text,
    )
    return EXIT_OK


def _align_config(args) -> AlignConfig:
    return AlignConfig(
        min_duration_frames=args.min_duration_frames,
        max_iterations=args.max_iterations,
        insert_pauses=not args.no_pauses,
    )


def _write_alignment(alignment, audio_path, out_dir, language, license_tag, speaker):
    out_dir.mkdir(parents=True, exist_ok=True)
    utterances = tuple(
        corpus_mod.Utterance(
            utterance_id=utt.verse_id,
            text=utt.text,
            audio_path=str(audio_path),
            start=utt.start_time,
            end=utt.end_time,
            speaker=speaker,
            score=utt.score,
        )
        for utt in alignment.utterances
    )
    manifest = corpus_mod.Manifest(
        language=language, source=f"found:{Path(audio_path).stem}",
        license=license_tag, utterances=utterances, root=out_dir,
    )
    corpus_mod.save_manifest(manifest, out_dir / "chapter_manifest.tsv")
    corpus_mod.save_segments(
        {utt.verse_id: list(utt.segments) for utt in alignment.utterances},
        out_dir / "segments.tsv",
    )


def cmd_align(args, config):
    table = load_g2p_table(args.table or config["g2p"])
    language = args.language or config.get("language", "")
    license_tag = args.license or config.get("license", "")
    speaker = args.speaker or config.get("speaker", "unknown")
    align_cfg = _align_config(args)

    if args.chapters:
        rows = [line.split("\t") for line in
                Path(args.chapters).read_text(encoding="utf-8").splitlines()
                if line.strip() and not line.startswith("#")]
        chapters = []
        for wav_path, verses_path in rows:
            clip = load_wav(wav_path)
            chapters.append(((clip, _records_from(Path(verses_path))), wav_path))
        with ThreadPoolExecutor(max_workers=_jobs(args)) as pool:
            if args.pool_models:
                alignments = align_corpus(
                    [c for c, _ in chapters], table, align_cfg, pool=True
                )
            else:
                alignments = list(
                    pool.map(
                        lambda c: align_chapter(c[0], c[1], table, align_cfg),
                        [c for c, _ in chapters],
                    )
                )
        for (chapter, wav_path), alignment in zip(chapters, alignments):
            if args.keep_fraction < 1.0:
                alignment = filter_by_score(alignment, args.keep_fraction)
            out_dir = Path(args.out_dir) / Path(wav_path).stem
            _write_alignment(
                alignment, Path(wav_path).resolve(), out_dir,
                language, license_tag, speaker,
            )
            print(
                f"{wav_path}: {len(alignment.utterances)} utterances, "
                f"{alignment.iterations} iterations, converged={alignment.converged}"
            )
        return EXIT_OK

    clip = load_wav(args.audio)
    verses = _records_from(Path(args.verses))
    alignment = align_chapter(clip, verses, table, align_cfg)
    if args.keep_fraction < 1.0:
        alignment = filter_by_score(alignment, args.keep_fraction)
    _write_alignment(
        alignment, Path(args.audio).resolve(), Path(args.out_dir),
        language, license_tag, speaker,
    )
    print(
        f"aligned {len(alignment.utterances)} utterances in "
        f"{alignment.iterations} iterations (converged={alignment.converged}) "
        f"-> {args.out_dir}"
    )
    return EXIT_OK


def cmd_cut(args, config):
    from .aligner import AlignedUtterance, ChapterAlignment

    manifest = corpus_mod.load_manifest(args.manifest)
    segments = corpus_mod.load_segments(args.segments) if args.segments else {}
    by_audio: dict[str, list] = {}
    for utt in manifest.utterances:
        by_audio.setdefault(utt.audio_path, []).append(utt)

    out_dir = Path(args.out_dir)
    all_utterances = []
    all_segments = {}
    for audio_path, utts in by_audio.items():
        clip = load_wav(manifest.resolve(utts[0]))
        alignment = ChapterAlignment(
            utterances=tuple(
                AlignedUtterance(
                    verse_id=u.utterance_id, text=u.text,
                    start_time=u.start, end_time=u.end,
                    score=u.score if u.score is not None else 0.0,
                    segments=tuple(segments.get(u.utterance_id, ())),
                )
                for u in utts
            ),
            iterations=0, converged=True, total_cost=0.0,
            frame_shift_ms=args.frame_shift_ms,
        )
        result = corpus_mod.cut_audio(
            alignment, clip, out_dir,
            language=manifest.language, source=manifest.source,
            license_tag=manifest.license or args.license,
            speaker=utts[0].speaker, normalize=not args.no_normalize,
        )
        all_utterances.extend(result.manifest.utterances)
        all_segments.update(result.segments)

    final = corpus_mod.Manifest(
        language=manifest.language, source=manifest.source,
        license=manifest.license or args.license,
        utterances=tuple(all_utterances), root=out_dir,
    )
    corpus_mod.save_manifest(final, out_dir / "manifest.tsv")
    if all_segments:
        corpus_mod.save_segments(all_segments, out_dir / "segments.tsv")
    print(f"cut {len(all_utterances)} utterances -> {out_dir}")
    return EXIT_OK


def cmd_split(args, config):
    manifest = corpus_mod.load_manifest(args.manifest)
    targets = tuple(float(m) for m in args.minutes.split(","))
    spec = corpus_mod.SplitSpec(
        target_minutes=targets,
        nested=not args.no_nest,
        order=args.order,
        seed=args.seed,
    )
    splits = corpus_mod.make_splits(manifest, spec)
    base = Path(args.manifest)
    for minutes, split in zip(targets, splits):
        suffix = f"_{minutes:g}min"
        out = base.with_name(base.stem + suffix + base.suffix)
        corpus_mod.save_manifest(split, out)
        duration = corpus_mod.total_duration(split) / 60.0
        print(f"{out}: {len(split.utterances)} utterances, {duration:.2f} min")
    return EXIT_OK


def cmd_validate(args, config):
    manifest = corpus_mod.load_manifest(args.manifest)
    report = corpus_mod.validate(manifest)
    if getattr(args, "format", "table") == "records":
        for violation in report.violations:
            print(json.dumps(violation.__dict__, sort_keys=True))
    else:
        if report.ok:
            print("manifest is valid")
        for violation in report.violations:
            print(f"{violation.kind}\t{violation.location}\t{violation.message}")
    return EXIT_OK


def cmd_stats(args, config):
    manifest = corpus_mod.load_manifest(args.manifest)
    s = corpus_mod.stats(manifest)
    _emit(
        args,
        {
            "utterances": s.utterance_count,
            "hours": round(s.total_hours, 2),
            "mean_utterance_seconds": s.mean_utterance_seconds,
        },
        corpus_mod.format_stats(s),
    )
    return EXIT_OK


def cmd_build_voice(args, config):
    manifest = corpus_mod.load_manifest(args.manifest)
    segments = corpus_mod.load_segments(args.segments)
    index = build_unit_index(manifest, segments)
    save_index(index, args.out)
    print(f"voice with {index.unit_count} units -> {args.out}")
    return EXIT_OK


def cmd_synth(args, config):
    table = load_g2p_table(args.table or config["g2p"])
    index = load_index(args.voice)
    weights = SynthWeights(join=args.join_weight, target=args.target_weight)
    if args.text is not None:
        clip, plan = synthesize(args.text, table, index, weights, args.crossfade_ms)
        save_wav(clip, args.out)
        print(
            f"synthesized {len(plan.positions)} diphones "
            f"(cost {plan.total_cost:.3f}) -> {args.out}"
        )
        return EXIT_OK
    prompts = _records_from(Path(args.infile))
    manifest, failures = batch_synthesize(
        prompts, table, index, args.out_dir,
        language=args.language or config.get("language", ""),
        license_tag=args.license or config.get("license", ""),
        weights=weights, crossfade_ms=args.crossfade_ms,
    )
    corpus_mod.save_manifest(manifest, Path(args.out_dir) / "manifest.tsv")
    print(f"synthesized {len(manifest.utterances)} of {len(prompts)} prompts")
    for prompt_id, reason in failures:
        print(f"FAILED {prompt_id}: {reason}")
    return EXIT_OK


def cmd_mcd(args, config):
    reference = corpus_mod.load_manifest(args.reference)
    hypothesis = (
        reference if args.self_test else corpus_mod.load_manifest(args.hypothesis)
    )
    result = mcd_testset(reference, hypothesis, align=not args.no_dtw)
    lines = [
        f"mean MCD: {result.mean_mcd:.3f} dB over {result.frame_pair_count} frame pairs"
    ]
    payload = {
        "mean_mcd": result.mean_mcd,
        "frame_pairs": result.frame_pair_count,
        "utterances": len(result.per_utterance),
        "missing_reference": list(result.missing_reference),
        "missing_hypothesis": list(result.missing_hypothesis),
    }
    if args.baseline is not None:
        significant = significant_difference(result.mean_mcd, args.baseline)
        delta = result.mean_mcd - args.baseline
        lines.append(
            f"delta vs baseline: {delta:+.3f} dB "
            f"({'perceptually significant' if significant else 'not significant'})"
        )
        payload["baseline_delta"] = delta
        payload["significant"] = significant
    if result.missing_reference or result.missing_hypothesis:
        lines.append(
            f"unmatched ids: {len(result.missing_reference)} only in hypothesis, "
            f"{len(result.missing_hypothesis)} only in reference"
        )
    _emit(args, payload, "\n".join(lines))
    return EXIT_OK


def _text_or_file(text, path):
    if path:
        return Path(path).read_text(encoding="utf-8").strip()
    return text


def cmd_cer(args, config):
    reference = _text_or_file(args.reference, args.reference_file)
    hypothesis = _text_or_file(args.hypothesis, args.hypothesis_file)
    strict = cer(reference, hypothesis)
    lenient = cer(reference, hypothesis, LENIENT_PROFILE)
    _emit(
        args,
        {
            "strict_cer": strict.cer,
            "strict_distance": strict.distance,
            "lenient_cer": lenient.cer,
            "reference_length": strict.reference_length,
        },
        (
            f"strict CER: {strict.percent:.2f} ({strict.distance} edits / "
            f"{strict.reference_length} chars)\n"
            f"lenient CER: {lenient.percent:.2f}"
        ),
    )
    return EXIT_OK


def cmd_serve(args, config):
    import uvicorn

    from .service import create_app

    app = create_app(args.data_dir, args.audio_dir, args.ui_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voxkit",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--config", help="key = value file with per-language resources")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, handler, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(handler=handler)
        return p

    p = add("normalize", cmd_normalize, "clean text and expand numbers")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--records", action="store_true", help="input is id<TAB>text lines")
    p.add_argument("--numbers", help="number dictionary file")
    p.add_argument("--keep-punctuation", action="store_true")

    p = add("g2p", cmd_g2p, "convert text to phone sequences")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--table", help="g2p rule table")
    p.add_argument("--records", action="store_true")

    p = add("select-prompts", cmd_select_prompts, "pick a recording prompt set")
    p.add_argument("--candidates", required=True, help="id<TAB>text candidate file")
    p.add_argument("--table", help="g2p rule table")
    p.add_argument("--count", type=int, default=1500)
    p.add_argument("--alpha", type=float, default=0.5, help="length penalty exponent")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("table", "records"), default="table")

    p = add("align", cmd_align, "segment chapter audio against verse text")
    p.add_argument("--audio", help="chapter WAV (PCM; convert mp3 beforehand)")
    p.add_argument("--verses", help="verse_id<TAB>text file")
    p.add_argument("--chapters", help="batch file: wav<TAB>verses per line")
    p.add_argument("--pool-models", action="store_true",
                   help="second pass with phone models pooled across chapters")
    p.add_argument("--table", help="g2p rule table")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--min-duration-frames", type=int, default=3)
    p.add_argument("--max-iterations", type=int, default=10)
    p.add_argument("--no-pauses", action="store_true")
    p.add_argument("--keep-fraction", type=float, default=1.0,
                   help="keep only the best-scoring fraction of utterances")
    p.add_argument("--language")
    p.add_argument("--license")
    p.add_argument("--speaker")
    p.add_argument("--jobs", type=int, default=0)

    p = add("cut", cmd_cut, "cut aligned utterances into per-utterance files")
    p.add_argument("--manifest", required=True)
    p.add_argument("--segments", help="phone segmentation sidecar")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--license", default="")
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--frame-shift-ms", type=float, default=10.0)
    p.add_argument("--jobs", type=int, default=0)

    p = add("split", cmd_split, "make duration-targeted corpus splits")
    p.add_argument("--manifest", required=True)
    p.add_argument("--minutes", required=True, help="comma list, e.g. 25,50,101")
    p.add_argument("--order", choices=("corpus", "random"), default="corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-nest", action="store_true")

    p = add("validate", cmd_validate, "check a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--format", choices=("table", "records"), default="table")

    p = add("stats", cmd_stats, "utterance count, hours, mean duration")
    p.add_argument("--manifest", required=True)
    p.add_argument("--format", choices=("table", "records"), default="table")

    p = add("build-voice", cmd_build_voice, "build a unit-selection voice index")
    p.add_argument("--manifest", required=True)
    p.add_argument("--segments", required=True)
    p.add_argument("--out", required=True)

    p = add("synth", cmd_synth, "synthesize text with a voice index")
    p.add_argument("--voice", required=True)
    p.add_argument("--table", help="g2p rule table")
    p.add_argument("--text")
    p.add_argument("--out", help="output wav (with --text)")
    p.add_argument("--in", dest="infile", help="prompt file id<TAB>text")
    p.add_argument("--out-dir", help="output directory (with --in)")
    p.add_argument("--join-weight", type=float, default=1.0)
    p.add_argument("--target-weight", type=float, default=0.2)
    p.add_argument("--crossfade-ms", type=float, default=10.0)
    p.add_argument("--language")
    p.add_argument("--license")

    p = add("mcd", cmd_mcd, "mel cepstral distortion between two corpora")
    p.add_argument("--reference", required=True)
    p.add_argument("--hypothesis")
    p.add_argument("--self", dest="self_test", action="store_true",
                   help="score the reference against itself (sanity check)")
    p.add_argument("--no-dtw", action="store_true")
    p.add_argument("--baseline", type=float,
                   help="baseline mean MCD to compare against")
    p.add_argument("--format", choices=("table", "records"), default="table")
    p.add_argument("--jobs", type=int, default=0)

    p = add("cer", cmd_cer, "character error rate, strict and lenient")
    p.add_argument("--reference")
    p.add_argument("--reference-file")
    p.add_argument("--hypothesis")
    p.add_argument("--hypothesis-file")
    p.add_argument("--format", choices=("table", "records"), default="table")

    p = add("serve", cmd_serve, "run the listening-test service")
    p.add_argument("--data-dir", default=os.environ.get("VOXKIT_DATA_DIR", "listen-data"))
    p.add_argument("--audio-dir", default=os.environ.get("VOXKIT_AUDIO_DIR", "."))
    p.add_argument("--ui-dir", default=os.environ.get("VOXKIT_UI_DIR"))
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    config = _read_config(args.config)
    try:
        return args.handler(args, config)
    except FileNotFoundError as err:
        print(f"error: missing input: {err}", file=sys.stderr)
        return EXIT_INPUT
    except (InfeasibleAlignmentError, SilentAudioError, SynthesisError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (
        AudioFormatError,
        TruncatedAudioError,
        DictionaryRangeError,
        ManifestError,
        VoxkitError,
        ValueError,
    ) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
