import math

import pytest

import mmkd


def small_config():
    cfg = mmkd.DistillConfig()
    cfg.epochs = 2
    cfg.hidden_dim = 8
    cfg.teacher_depth = 2
    cfg.batch_size = 16
    return cfg


def test_losses_match_hand_values():
    assert mmkd.kd_loss([1.0, 0.0], [0.0, 1.0], 1.0) == pytest.approx((math.e - 1) / (math.e + 1), rel=1e-12)
    assert mmkd.ce_loss([1.0, 2.0, 0.0], 1) == pytest.approx(0.407606, rel=1e-6)
    assert mmkd.gram([[1, 0], [0, 1], [1, 1]]) == [[1, 0, 1], [0, 1, 1], [1, 1, 2]]
    cfg = mmkd.DistillConfig()
    cfg.normalize_rows = False
    assert mmkd.relation_loss([[0, 0]] * 3, [[1, 0]] * 3, cfg) == 1.0


def test_errors_map_to_python_exceptions():
    with pytest.raises(mmkd.ParameterError):
        mmkd.generate(100, 4, 4, 1, 0.1, 0)
    with pytest.raises(mmkd.ParseError):
        mmkd.parse_csv("label,x0\n0,1\n")
    with pytest.raises(mmkd.Error):
        mmkd.deserialize("{}")
    with pytest.raises(RuntimeError):
        mmkd.kd_loss([1.0], [1.0, 2.0], 1.0)


def test_data_round_trip_and_balance():
    ds = mmkd.generate(300, 4, 4, 3, 0.1, 7)
    assert len(ds) == 300
    assert ds.class_counts() == [100, 100, 100]
    text = mmkd.to_csv(ds)
    assert mmkd.to_csv(mmkd.parse_csv(text)) == text
    train, val, test = mmkd.split(ds)
    assert (len(train), len(val), len(test)) == (240, 30, 30)
    assert mmkd.rule_accuracy(mmkd.generate(200, 4, 4, 3, 0.0, 3), 3) == 1.0


def test_model_document_round_trip():
    net = mmkd.new_modal_net(4, 4, 8, 3, 2, 1)
    doc = mmkd.serialize(net)
    back = mmkd.deserialize(doc)
    assert mmkd.serialize(back) == doc
    assert back.depth == 2
    logits = mmkd.forward(net, [0.1] * 4, [0.2] * 4, mmkd.ModalityMode.JOINT)
    assert len(logits) == 3
    assert len(mmkd.activations(net, [0.1] * 4, [0.2] * 4, mmkd.ActivationSource.HIDDEN)) == 3


def test_train_distill_evaluate():
    ds = mmkd.generate(300, 4, 4, 3, 0.1, 1)
    train, val, test = mmkd.split(ds, seed=1)
    cfg = small_config()
    teacher, report = mmkd.train_teacher(train, val, cfg)
    assert '"role": "teacher"' in report
    student, sreport, trace = mmkd.distill_student(teacher, train, val, cfg)
    assert student.depth == cfg.student_depth
    assert '"records"' in trace
    acc = mmkd.evaluate(student, test)
    assert 0.0 <= acc <= 1.0
    same = mmkd.total_distill_loss(teacher, teacher, [0.1] * 4, [0.3] * 4, 1, cfg)
    assert same["kd"] == 0.0 and same["mr"] == 0.0


def test_compare_gradcheck_and_heatmap():
    ds = mmkd.generate(300, 4, 4, 3, 0.1, 2)
    text, doc = mmkd.compare_kd_vs_mr(ds, small_config(), 1)
    assert "Ours" in text and '"rows"' in doc
    result = mmkd.gradcheck(seed=0, trials=5)
    assert result["passed"] and result["max_rel_error"] < 1e-4
    pgm = mmkd.heatmap_pgm([[0, 0, 0]] * 3)
    assert pgm.startswith(b"P5\n96 96\n255\n")
    assert set(pgm[13:]) == {128}


def test_config_json_round_trip():
    cfg = mmkd.DistillConfig()
    cfg.lambda_mr = 0.25
    cfg.relation_mode = mmkd.RelationMode.RAW
    assert mmkd.DistillConfig.from_json(cfg.to_json()) == cfg
    with pytest.raises(mmkd.ParseError):
        mmkd.DistillConfig.from_json('{"lamda": 1}')
