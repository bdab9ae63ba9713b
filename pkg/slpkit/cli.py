#!/usr/bin/env python3

import sys
import logging
import textwrap

from docopt import docopt, DocoptExit
from pathlib import Path
from nonstdlib import indices_from_str
from . import api
from .config import load_config, format_config, log_config
from .errors import *

log = logging.getLogger(__name__)

commands = {}

def command(f):
    commands[f.__name__.replace('_', '-')] = f
    return f

def parse_cli(main=None, argv=None, **kwargs):
    import inspect
    from textwrap import dedent

    if main is None:
        frame = inspect.stack()[1]
        main = globals()[frame.function]

    doc = dedent(main.__doc__.format(**kwargs))
    return docopt(doc, argv=argv)

def format_command_descriptions():
    # Note that the docstrings are all indented, and will be de-dented before
    # rendering to the stdout.  That's why indent needs to be 8 and not 4.
    indent_len, pad_len, line_len = 8, 2, 79
    max_cmd_len = max(len(x) for x in commands)
    desc_len = line_len - indent_len - pad_len - max_cmd_len

    doc = ''
    indent = ' ' * indent_len

    for cmd, func in commands.items():
        pad = ' ' * (pad_len + (max_cmd_len - len(cmd)))
        desc = textwrap.shorten(
                (func.__doc__ or '').split('\n')[0],
                width=desc_len,
                placeholder='...',
        )
        doc += f'{indent}{cmd}{pad}{desc}\n'

    return doc.strip()

def resolve_config(args, **flags):
    """
    Load the config file and overrides named on the command line, set up
    logging, and log the resolved settings.
    """
    logging.basicConfig(
            level=logging.WARNING if args['--quiet'] else logging.INFO,
            format='%(levelname)s %(name)s: %(message)s',
    )
    flags['seed'] = args['--seed']
    config = load_config(args['--config'], args['--set'], flags)
    log_config(config)
    return config


def main(argv=None):
    """\
    Train and run a speech-language model for spoken language understanding.

    Usage:
        slpkit <command> [<args>...] [options]

    Commands:
        {commands}

    Every command accepts a config file (-c) and any number of individual
    settings (-s section.key=value).  Run `slpkit <command> -h` for details.
    """
    argv = sys.argv[1:] if argv is None else argv

    try:
        if argv and argv[0] in commands:
            return commands[argv[0]](argv)
        else:
            parse_cli(argv=['-h'], commands=format_command_descriptions())

    except DocoptExit as err:
        print(err, file=sys.stderr)
        sys.exit(UsageError.exit_code)

    except SlpError as err:
        print(f"slpkit: {err.category} error: {err}", file=sys.stderr)
        sys.exit(err.exit_code)

@command
def gen_data(argv):
    """\
    Generate a synthetic corpus of paired speech embeddings and transcripts.

    Usage:
        slpkit gen-data [<out_dir>] [-g <name>] [-s <setting>]... [options]

    Arguments:
        <out_dir>
            The directory to write the manifests ('train.tsv', 'dev.tsv',
            'test.tsv') and the embedding files to.  The default is the
            `corpus.dir` setting.

    Options:
        -g --grammar <name>
            The grammar to draw sentences from: 'fsc-like' or 'atis-like'.

        -c --config <path>
            Read settings from the given config file.

        -s --set <setting>
            Override a single setting, e.g. `-s corpus.n_train=500`.

        --seed <n>
            The random seed.  The default is the `seed` setting, then
            $SLP_SEED, then 0.

        -q --quiet
            Only log warnings and errors.
    """
    args = parse_cli(argv=argv)
    config = resolve_config(args, **{'corpus.grammar': args['--grammar']})
    corpus = config.corpus

    summary = api.generate_corpus(
            corpus.grammar,
            corpus.n_train,
            corpus.n_dev,
            corpus.n_test,
            config.encoder,
            config.seed,
            args['<out_dir>'] or corpus.dir,
    )
    print(summary.format(), end='')

@command
def build_vocab(argv):
    """\
    Build a subword vocabulary from the transcripts and frames of a manifest.

    Usage:
        slpkit build-vocab <manifest> <vocab> [-g <name>] [-s <setting>]... [options]

    Arguments:
        <manifest>
            The training manifest.  Both the transcripts and the linearized
            frames are used to build the vocabulary.

        <vocab>
            The path to write the vocabulary to.

    Options:
        -g --grammar <name>
            Reserve the intents and slot types of the given grammar as atomic
            tokens.  The labels that appear in the manifest are always
            reserved.

        -c --config <path>
            Read settings from the given config file.

        -s --set <setting>
            Override a single setting, e.g. `-s vocab.size=1000`.

        --seed <n>
            The random seed.

        -q --quiet
            Only log warnings and errors.
    """
    args = parse_cli(argv=argv)
    config = resolve_config(args, **{'corpus.grammar': args['--grammar']})
    manifest = api.read_manifest(args['<manifest>'], check_files=False)

    frames = [api.parse_frame(x.frame_text).frame for x in manifest]
    intents, slot_types = api.label_sets(frames)
    reserved = [api.FIELD_SEP, api.INTENT_SEP, *sorted(intents), *sorted(slot_types)]

    if args['--grammar']:
        grammar = api.find_grammar(config.corpus.grammar)
        reserved += [x for x in grammar.reserved_tokens if x not in reserved]

    corpus = [x.transcript for x in manifest] + [x.frame_text for x in manifest]
    vocab = api.train_vocab(corpus, config.vocab.size, config.vocab.min_freq, reserved)
    api.write_vocab(args['<vocab>'], vocab)

    log.info(f"wrote {len(vocab)} tokens to {args['<vocab>']}")

@command
def train(argv):
    """\
    Train a model on the utterances of a manifest.

    Usage:
        slpkit train <manifest> <vocab> <checkpoint> [-s <setting>]... [options]

    Arguments:
        <manifest>
            The training manifest.

        <vocab>
            The vocabulary file.

        <checkpoint>
            The path to write the trained model to.

    Options:
        -r --regime <name>
            What the model learns to generate:

            pretrain:         transcripts
            finetune:         linearized frames, starting from --init
            onestep-slu:      linearized frames, from scratch
            onestep-asr-slu:  "transcript [SLU] frame", from scratch

        -i --init <checkpoint>
            Continue training from the given checkpoint.  Required by the
            'finetune' regime.  The model settings are taken from the
            checkpoint rather than the config.

        -e --epochs <n>
            The number of passes over the training data.

        -d --dev <manifest>
            Log the loss on the given held-out manifest after each epoch.

        -l --loss-log <path>
            Where to write the loss log.  The default is the checkpoint path
            with a '.loss' suffix added.

        -c --config <path>
            Read settings from the given config file.

        -s --set <setting>
            Override a single setting, e.g. `-s train.lr=3e-4`.

        --seed <n>
            The random seed.

        -q --quiet
            Only log warnings and errors.
    """
    args = parse_cli(argv=argv)
    config = resolve_config(
            args, **{
                'train.regime': args['--regime'],
                'train.epochs': args['--epochs'],
            })
    regime = config.train.regime
    vocab = api.read_vocab(args['<vocab>'])

    if args['--init']:
        params = api.load_checkpoint(args['--init'])
        model_config = params.config
        if model_config.vocab_size != len(vocab):
            raise VocabError(f"{args['--init']} was trained with {model_config.vocab_size} tokens, but {args['<vocab>']} has {len(vocab)}")
    else:
        params = None
        model_config = config.model.model_copy(update={'vocab_size': len(vocab)})

    def examples_from(path):
        manifest = api.read_manifest(path)
        return api.build_examples(manifest, regime, vocab, manifest.load_speech)

    examples = examples_from(args['<manifest>'])
    dev_examples = examples_from(args['--dev']) if args['--dev'] else None

    params, loss_log = api.run_regime(
            examples, config.train, params,
            model_config=model_config,
            policy=config.masking,
            dev_examples=dev_examples,
    )

    checkpoint = Path(args['<checkpoint>'])
    loss_path = args['--loss-log'] or checkpoint.with_name(checkpoint.name + '.loss')

    api.save_checkpoint(checkpoint, params)
    loss_log.write(loss_path, format_config(config))

@command
def generate(argv):
    """\
    Decode transcripts and/or semantic frames for the utterances of a manifest.

    Usage:
        slpkit generate <manifest> <checkpoint> <vocab> <hyps> [-s <setting>]... [options]

    Arguments:
        <manifest>
            The utterances to decode.  Only the embeddings are used; the
            reference transcripts and frames are ignored.

        <checkpoint>
            The model to decode with.  For two-pass output, this must be the
            pre-trained (transcript) model.

        <vocab>
            The vocabulary the model was trained with.

        <hyps>
            The path to write the hypothesis manifest to.  It lists the same
            embedding files as the input manifest.

    Options:
        -m --mode <mode>
            The search to use: 'greedy' or 'beam'.

        -o --output <kind>
            What to generate:

            transcript:  transcripts only
            slu:         linearized frames only
            asr-slu:     "transcript [SLU] frame", split into both columns
            two-pass:    transcripts from <checkpoint>, frames from --finetuned

        -f --finetuned <checkpoint>
            The fine-tuned model used to generate frames in two-pass mode.

        -n --nbest <path>
            Also write every hypothesis of the final beam to the given path.

        -I --index <i>
            Only decode the utterances with the given indices, starting from
            0.  You can select multiple utterances by using commas and dashes,
            e.g. 1-3,5

        -c --config <path>
            Read settings from the given config file.

        -s --set <setting>
            Override a single setting, e.g. `-s decode.beam_size=8`.

        --seed <n>
            The random seed.

        -q --quiet
            Only log warnings and errors.
    """
    args = parse_cli(argv=argv)
    config = resolve_config(
            args, **{
                'decode.mode': args['--mode'],
                'decode.output': args['--output'],
            })

    model = api.load(args['<checkpoint>'], args['<vocab>'], config.decode)
    finetuned = None

    if config.decode.output is api.Output.TWO_PASS:
        if not args['--finetuned']:
            raise UsageError("two-pass output needs a fine-tuned model (--finetuned)")
        finetuned = api.load(args['--finetuned'], args['<vocab>'], config.decode)

    manifest = api.read_manifest(args['<manifest>'], check_frames=False)
    hyps_dir = Path(args['<hyps>']).parent
    hyps_dir.mkdir(parents=True, exist_ok=True)
    records, nbest_lines = [], []

    for i, record in enumerate(manifest):
        if args['--index'] and i not in indices_from_str(args['--index']):
            continue

        speech = manifest.load_speech(record)
        transcript, frame_text, nbest = model.decode(speech, finetuned)

        records.append(api.ManifestRecord(
                record.utterance_id,
                manifest.relocate(record, hyps_dir).embedding_path,
                transcript,
                frame_text,
        ))
        nbest_lines += [f'# {record.utterance_id}\n', nbest]

    api.write_manifest(args['<hyps>'], records, format_config(config))
    log.info(f"wrote {len(records)} hypotheses to {args['<hyps>']}")

    if args['--nbest']:
        Path(args['--nbest']).write_text(''.join(nbest_lines), encoding='utf8')

@command
def evaluate(argv):
    """\
    Score a hypothesis manifest against a reference manifest.

    Usage:
        slpkit evaluate <refs> <hyps> [<report>] [-s <setting>]... [options]

    Arguments:
        <refs>
            The reference manifest.

        <hyps>
            The hypothesis manifest, e.g. from `slpkit generate`.  It must
            have exactly the same utterance ids as the references.

        <report>
            Also write the report (headed by the resolved settings) to the
            given path.

    Options:
        -j --json
            Print the report as a single line of JSON.

        -c --config <path>
            Read settings from the given config file.

        -s --set <setting>
            Override a single setting.

        --seed <n>
            The random seed.

        -q --quiet
            Only log warnings and errors.
    """
    args = parse_cli(argv=argv)
    config = resolve_config(args)

    refs = api.read_manifest(args['<refs>'], check_files=False)
    hyps = api.read_manifest(args['<hyps>'], check_files=False, check_frames=False)
    report = api.evaluate(refs, hyps)

    if args['<report>']:
        text = api.format_report(report, format_config(config))
        Path(args['<report>']).write_text(text, encoding='utf8')

    if args['--json']:
        print(report.model_dump_json())
    else:
        print(api.format_report(report), end='')

@command
def verify(argv):
    """\
    Run the property suites that check the model, decoder and metrics.

    Usage:
        slpkit verify [-S <name>]... [-t <n>] [-s <setting>]... [options]

    Options:
        -S --suite <name>
            Only run the given suite.  May be given more than once.  The
            suites are: {suites}

        -t --trials <n>
            Run each suite with the given number of trials, instead of the
            number it normally uses.

        -c --config <path>
            Read settings from the given config file.

        -s --set <setting>
            Override a single setting.

        --seed <n>
            The random seed.

        -q --quiet
            Only log warnings and errors.
    """
    from . import verify as suites

    args = parse_cli(argv=argv, suites=', '.join(suites.suites))
    config = resolve_config(args)
    trials = int(args['--trials']) if args['--trials'] else None

    results = suites.run_suites(args['--suite'], trials, config.seed)
    for result in results:
        print(result.format())

    failed = [x.name for x in results if not x.passed]
    if failed:
        raise VerificationFailed(f"failed suites: {', '.join(failed)}")
