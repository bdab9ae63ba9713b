#!/usr/bin/env python3

import json
import pytest
import slpkit as slp

from slpkit.slu_codec import corpus_wer

def frame(intents, *slots):
    return slp.SemanticFrame(intents.split('+'), slots)

@pytest.mark.parametrize(
        'given, expected', [
            (frame('activate_lights'), 'activate_lights'),
            (frame('flight+airfare'), 'flight+airfare'),
            (frame('flight', ('from_city', 'pittsburgh'), ('to_city', 'new york')),
                'flight & from_city pittsburgh & to_city new york'),
        ],
)
def test_linearize(given, expected):
    assert slp.linearize(given) == expected
    assert slp.parse_frame(expected).frame == given

@pytest.mark.parametrize(
        'intents, slots', [
            ([], []),
            (['Flight'], []),
            (['flight info'], []),
            (['flight'], [('to_city', '')]),
            (['flight'], [('to_city', 'New York')]),
            (['flight'], [('to_city', 'a & b')]),
            (['flight'], [('to city', 'boston')]),
        ],
)
def test_semantic_frame_errors(intents, slots):
    with pytest.raises(slp.FrameError):
        slp.SemanticFrame(intents, slots)

def test_semantic_frame():
    f = slp.SemanticFrame(['flight'], [['to_city', 'boston']])

    assert f.intents == ('flight',)
    assert f.slots == (('to_city', 'boston'),)
    assert f.slot_types == ['to_city']

@pytest.mark.parametrize(
        'text, intents, slots, num_anomalies', [
            ('flight', ['flight'], [], 0),
            ('  Flight &  to_city   Boston ', ['flight'], [('to_city', 'boston')], 0),
            ('flight & to_city', ['flight'], [], 1),
            ('flight & & to_city boston', ['flight'], [('to_city', 'boston')], 1),
            ('flight & to_city a + b', ['flight'], [], 1),
            ('flight+ & to_city boston', ['flight'], [('to_city', 'boston')], 1),
            ('hotel & to_city boston', None, [], 1),
            ('flight & to_hotel boston', ['flight'], [], 1),
            ('', None, [], 1),
            ('& to_city boston', None, [], 1),
        ],
)
def test_parse(text, intents, slots, num_anomalies):
    result = slp.parse_frame(text, {'flight', 'airfare'}, {'to_city', 'from_city'})

    if intents is None:
        assert result.frame is None
    else:
        assert list(result.frame.intents) == intents
        assert list(result.frame.slots) == slots

    assert len(result.anomalies) == num_anomalies
    assert result.ok == (result.frame is not None and num_anomalies == 0)

def test_parse_any_label():
    result = slp.parse_frame('hotel & to_hotel hilton')

    assert result.ok
    assert result.frame == frame('hotel', ('to_hotel', 'hilton'))

def test_label_sets():
    frames = [
            frame('flight', ('to_city', 'boston')),
            frame('flight+airfare', ('from_city', 'denver'), ('to_city', 'austin')),
    ]
    assert slp.label_sets(frames) == (
            {'flight', 'airfare'},
            {'to_city', 'from_city'},
    )

@pytest.mark.parametrize(
        'ref, hyp, expected', [
            ('a b c', 'a b c', 0),
            ('a b c', 'a x c', 1/3),
            ('a b c', 'a c', 1/3),
            ('a b c', 'a b c d e', 2/3),
            ('a b', '', 1),
            ('a b', 'c d e f', 2),
            ('a  b', ' a b ', 0),
        ],
)
def test_wer(ref, hyp, expected):
    assert slp.wer(ref, hyp) == pytest.approx(expected)

def test_wer_err():
    with pytest.raises(slp.DataError):
        slp.wer('', 'a')

def test_corpus_wer():
    # Totals are summed before dividing: (1 + 0) / (4 + 1).
    assert corpus_wer(['a b c d', 'e'], ['a b x d', 'e']) == (0.2, 1, 5)

    with pytest.raises(slp.DataError):
        corpus_wer(['a'], [])
    with pytest.raises(slp.DataError):
        corpus_wer([''], [''])

def test_score_perfect():
    refs = [
            frame('flight', ('to_city', 'boston')),
            frame('airfare+flight', ('from_city', 'denver')),
    ]
    report = slp.score(refs, refs, ['to boston', 'denver fares'], ['to boston', 'denver fares'])

    assert report.num_utterances == 2
    assert report.intent_acc == 1.0
    assert report.slot_precision == 1.0
    assert report.slot_recall == 1.0
    assert report.slot_f1 == 1.0
    assert report.wer == 0.0

def test_score():
    refs = [
            frame('flight', ('to_city', 'boston'), ('to_city', 'boston')),
            frame('airfare', ('from_city', 'denver')),
            frame('flight'),
    ]
    hyps = [
            # Intents compare as sets.
            frame('flight', ('to_city', 'boston'), ('to_city', 'austin')),
            None,
            frame('airfare', ('from_city', 'denver')),
    ]
    report = slp.score(refs, hyps, parse_anomalies=1)

    assert report.intent_correct == 1
    assert report.intent_acc == pytest.approx(1/3)
    assert report.ref_slots == 3
    assert report.hyp_slots == 3
    assert report.slot_matches == 1
    assert report.slot_precision == pytest.approx(1/3)
    assert report.slot_recall == pytest.approx(1/3)
    assert report.slot_f1 == pytest.approx(1/3)
    assert report.wer is None
    assert report.parse_anomalies == 1

def test_score_intent_order():
    report = slp.score([frame('flight+airfare')], [frame('airfare+flight')])

    assert report.intent_acc == 1.0
    assert report.slot_f1 is None

def test_score_no_matches():
    report = slp.score([frame('flight', ('to_city', 'boston'))], [frame('flight')])

    assert report.slot_precision == 0.0
    assert report.slot_recall == 0.0
    assert report.slot_f1 == 0.0

def test_score_errors():
    with pytest.raises(slp.DataError):
        slp.score([], [])
    with pytest.raises(slp.DataError):
        slp.score([frame('flight')], [])

def test_format_report():
    report = slp.score([frame('flight')], [frame('flight')])
    text = slp.format_report(report, ['seed = 0'])
    lines = text.splitlines()

    assert lines[0] == '# seed = 0'
    assert 'num_utterances\t1' in lines
    assert 'intent_acc\t1.0' in lines
    assert 'wer\tn/a' in lines
    assert 'slot_f1\tn/a' in lines

    key, value = lines[-1].split('\t')
    assert key == 'json'
    assert json.loads(value)['intent_acc'] == 1.0
    assert slp.EvalReport.model_validate_json(value) == report
