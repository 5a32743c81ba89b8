"""Command line for the extractor: corpus + encoders -> EMBX files.

Fetches pretrained models by name (network path); for scripted or offline
use, build an ExtractJob directly with encoder wrappers instead.
"""

import argparse
import sys

from .encoders import load_speech_encoder, load_text_encoder
from .extract import ExtractJob, run_job


def build_parser():
    parser = argparse.ArgumentParser(
        prog="embx-extract",
        description="extract per-layer encoder activations for dialogue decisions",
    )
    parser.add_argument("--corpus", required=True, help="corpus JSONL path")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--text-encoder", default=None,
                        help="pretrained text model name or path")
    parser.add_argument("--speech-encoder", default=None,
                        help="pretrained speech model name or path")
    parser.add_argument("--revision", default=None,
                        help="model revision to pin (recorded in the manifest)")
    parser.add_argument("--audio-root", default="",
                        help="directory that speech_ref paths are relative to")
    parser.add_argument("--use-asr", action="store_true",
                        help="serialize user turns from their ASR transcripts")
    parser.add_argument("--split", action="append", default=None,
                        help="restrict to a split (repeatable)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if not args.text_encoder and not args.speech_encoder:
        print("error: need --text-encoder and/or --speech-encoder", file=sys.stderr)
        return 2
    text = (load_text_encoder(args.text_encoder, args.revision)
            if args.text_encoder else None)
    speech = (load_speech_encoder(args.speech_encoder, args.revision)
              if args.speech_encoder else None)
    job = ExtractJob(
        corpus_path=args.corpus,
        out_dir=args.out,
        text_encoder=text,
        speech_encoder=speech,
        audio_root=args.audio_root,
        use_asr=args.use_asr,
        splits=tuple(args.split or ()),
    )
    summary = run_job(job)
    print(f"decisions      {summary['decisions']}")
    print(f"text files     {summary['text_files']}")
    print(f"speech files   {summary['speech_files']}")
    print(f"skipped audio  {summary['skipped_audio']}")
    print(f"manifest       {summary['manifest']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
