#!/usr/bin/env python3

import json
import pytest
import slpkit as slp

from slpkit.cli import main, commands

CONFIG = '''\
seed = 0
corpus.grammar = fsc-like
corpus.n_train = 6
corpus.n_dev = 2
corpus.n_test = 2
encoder.d_speech = 8
encoder.frames_per_char = 1-1
vocab.size = 200
vocab.min_freq = 1
model.n_layers = 1
model.n_heads = 2
model.d_model = 8
model.d_ff = 16
model.d_speech = 8
model.max_frames = 48
model.max_text = 12
train.epochs = 1
train.batch_size = 4
train.lr = 0.001
decode.beam_size = 2
decode.max_len = 6
'''

@pytest.fixture
def workspace(tmp_path):
    (tmp_path / 'run.conf').write_text(CONFIG)
    return tmp_path

@pytest.fixture
def run(workspace, capsys):

    def helper(*argv):
        capsys.readouterr()
        argv = [str(x) for x in argv] + ['-c', str(workspace / 'run.conf'), '-q']
        main(argv)
        return capsys.readouterr().out

    return helper

@pytest.fixture
def pretrained(workspace, run):
    run('gen-data', workspace / 'data')
    run('build-vocab', workspace / 'data/train.tsv', workspace / 'vocab.txt')
    run('train', workspace / 'data/train.tsv', workspace / 'vocab.txt', workspace / 'pre.ckpt')
    return workspace

def test_commands():
    assert list(commands) == [
            'gen-data',
            'build-vocab',
            'train',
            'generate',
            'evaluate',
            'verify',
    ]

def test_gen_data(workspace, run):
    out = run('gen-data', workspace / 'data')

    assert 'grammar\tfsc-like\n' in out
    assert 'train\t6\n' in out
    assert len(slp.read_manifest(workspace / 'data/dev.tsv')) == 2

def test_gen_data_grammar(workspace, run):
    out = run('gen-data', workspace / 'data', '-g', 'atis-like')
    assert 'grammar\tatis-like\n' in out
    assert 'test_sentences_seen_in_training\t0\n' in out

def test_build_vocab(workspace, run):
    run('gen-data', workspace / 'data')
    run('build-vocab', workspace / 'data/train.tsv', workspace / 'vocab.txt')

    vocab = slp.read_vocab(workspace / 'vocab.txt')
    manifest = slp.read_manifest(workspace / 'data/train.tsv')

    assert '&' in vocab
    for record in manifest:
        assert record.frame_text in vocab
        assert slp.tokenizer.UNK not in slp.tokenize(record.transcript, vocab)

def test_build_vocab_grammar(workspace, run):
    run('gen-data', workspace / 'data')
    run('build-vocab', workspace / 'data/train.tsv', workspace / 'vocab.txt', '-g', 'fsc-like')

    vocab = slp.read_vocab(workspace / 'vocab.txt')
    assert all(x in vocab for x in slp.find_grammar('fsc-like').intents)

def test_pipeline(pretrained, run):
    ws = pretrained

    loss_log = (ws / 'pre.ckpt.loss').read_text()
    assert loss_log.startswith('# ')
    assert 'model.d_model = 8' in loss_log
    assert 'epoch 1 step 1 loss ' in loss_log

    run('train', ws / 'data/train.tsv', ws / 'vocab.txt', ws / 'ft.ckpt',
            '-r', 'finetune', '-i', ws / 'pre.ckpt', '-d', ws / 'data/dev.tsv')
    assert 'epoch 1 dev ' in (ws / 'ft.ckpt.loss').read_text()

    run('generate', ws / 'data/test.tsv', ws / 'pre.ckpt', ws / 'vocab.txt', ws / 'hyps/asr.tsv',
            '-o', 'transcript', '-n', ws / 'nbest.txt')

    hyps = slp.read_manifest(ws / 'hyps/asr.tsv', check_frames=False)
    refs = slp.read_manifest(ws / 'data/test.tsv')

    assert [x.utterance_id for x in hyps] == [x.utterance_id for x in refs]
    assert all(x.frame_text == '' for x in hyps)
    assert hyps.records[0].embedding_path == '../data/embeddings/test-00000.slpe'
    assert (ws / 'nbest.txt').read_text().startswith('# test-00000\n1\t')

    run('generate', ws / 'data/test.tsv', ws / 'pre.ckpt', ws / 'vocab.txt', ws / 'hyps/slu.tsv',
            '-o', 'two-pass', '-f', ws / 'ft.ckpt', '-m', 'greedy')
    assert len(slp.read_manifest(ws / 'hyps/slu.tsv', check_frames=False)) == 2

    out = run('evaluate', ws / 'data/test.tsv', ws / 'hyps/slu.tsv', ws / 'report.txt')

    assert 'num_utterances\t2\n' in out
    assert 'intent_acc\t' in out
    assert (ws / 'report.txt').read_text().startswith('# ')

def test_generate_index(pretrained, run):
    ws = pretrained
    run('generate', ws / 'data/test.tsv', ws / 'pre.ckpt', ws / 'vocab.txt', ws / 'hyps.tsv', '-I', '1')

    hyps = slp.read_manifest(ws / 'hyps.tsv', check_frames=False)
    assert [x.utterance_id for x in hyps] == ['test-00001']

def test_train_zero_epochs(pretrained, run):
    ws = pretrained
    run('train', ws / 'data/train.tsv', ws / 'vocab.txt', ws / 'copy.ckpt',
            '-i', ws / 'pre.ckpt', '-e', '0')

    assert (ws / 'copy.ckpt').read_bytes() == (ws / 'pre.ckpt').read_bytes()

def test_train_deterministic(pretrained, run):
    ws = pretrained
    run('train', ws / 'data/train.tsv', ws / 'vocab.txt', ws / 'again.ckpt')

    assert (ws / 'again.ckpt').read_bytes() == (ws / 'pre.ckpt').read_bytes()

def test_evaluate_perfect(workspace, run):
    run('gen-data', workspace / 'data')
    out = run('evaluate', workspace / 'data/test.tsv', workspace / 'data/test.tsv', '--json')
    report = json.loads(out)

    assert report['intent_acc'] == 1.0
    assert report['wer'] == 0.0
    assert report['parse_anomalies'] == 0

def test_verify(run):
    out = run('verify', '-S', 'wer-oracle', '-S', 'codec-roundtrip', '-t', '20')
    lines = out.splitlines()

    assert lines[0].startswith('PASS\twer-oracle\t20 trials')
    assert lines[1].startswith('PASS\tcodec-roundtrip\t20 trials')

@pytest.mark.parametrize(
        'argv, exit_code', [
            (['train'], 2),
            (['gen-data', '-s', 'model.width=3'], 2),
            (['verify', '-S', 'no-such-suite'], 2),
            (['evaluate', 'missing.tsv', 'missing.tsv'], 3),
        ],
)
def test_exit_codes(workspace, monkeypatch, capsys, argv, exit_code):
    monkeypatch.chdir(workspace)

    with pytest.raises(SystemExit) as err:
        main(argv)

    assert err.value.code == exit_code

def test_two_pass_needs_finetuned(pretrained, capsys):
    ws = pretrained

    with pytest.raises(SystemExit) as err:
        main([
            'generate', str(ws / 'data/test.tsv'), str(ws / 'pre.ckpt'),
            str(ws / 'vocab.txt'), str(ws / 'hyps.tsv'), '-o', 'two-pass',
            '-c', str(ws / 'run.conf'),
        ])

    assert err.value.code == 2
    assert 'usage error' in capsys.readouterr().err

def test_vocab_mismatch(pretrained, run, capsys):
    ws = pretrained
    (ws / 'small.txt').write_text('#slp-vocab v1\n' + '\n'.join(slp.tokenizer.SPECIALS) + '\nturn\n')

    with pytest.raises(SystemExit) as err:
        main([
            'train', str(ws / 'data/train.tsv'), str(ws / 'small.txt'),
            str(ws / 'ft.ckpt'), '-i', str(ws / 'pre.ckpt'),
        ])

    assert err.value.code == 3

def test_corrupted_checkpoint(pretrained, capsys):
    ws = pretrained
    header, config, _ = (ws / 'pre.ckpt').read_bytes().split(b'\n', 2)
    rank = b'\xff' * 7 + b'\x7f'
    (ws / 'bad.ckpt').write_bytes(header + b'\n' + config + b'\n' + b'\x01' + b'\x00' * 7 + b'a' + rank)

    with pytest.raises(SystemExit) as err:
        main([
            'generate', str(ws / 'data/test.tsv'), str(ws / 'bad.ckpt'),
            str(ws / 'vocab.txt'), str(ws / 'hyps.tsv'),
            '-c', str(ws / 'run.conf'),
        ])

    assert err.value.code == 3
    assert 'bad.ckpt' in capsys.readouterr().err
