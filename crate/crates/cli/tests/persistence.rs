mod common;

use adoirt::calibration::ItemBank;
use adoirt::io;
use adoirt::nnet::Checkpoint;
use adoirt::Error;
use adoirt_cli::session::{read_log, replay, Deployment, Event, EventStore, Session, SessionManager, Status};

use common::{fixture_bank, fixture_checkpoint, fixture_deployment, fixture_manager, golden_dir, HORIZON};

const GOLDEN_OUTCOMES: [u8; HORIZON] = [1, 1, 0, 1, 0, 0, 1, 0, 1, 1];

#[test]
fn restart_restores_sessions_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (done, partial) = {
        let m = fixture_manager(Some(EventStore::open(dir.path()).unwrap()));
        let a = m.create().unwrap();
        for t in 0..HORIZON {
            m.submit(&a.id, (t % 3 == 0) as i64, None).unwrap();
        }
        let b = m.create().unwrap();
        m.submit(&b.id, 1, Some(0)).unwrap();
        // rejected responses must not reach the log
        assert!(m.submit(&b.id, 7, None).is_err());
        assert!(m.submit(&b.id, 1, Some(0)).is_err());
        (m.get(&a.id).unwrap(), m.get(&b.id).unwrap())
    };
    let m = fixture_manager(Some(EventStore::open(dir.path()).unwrap()));
    assert_eq!(m.len(), 2);
    assert_eq!(m.get(&done.id).unwrap(), done);
    assert_eq!(m.get(&partial.id).unwrap(), partial);
    assert_eq!(done.status, Status::Completed);

    // the restored session keeps accepting responses where it left off
    let next = m.submit(&partial.id, 0, Some(1)).unwrap();
    assert_eq!(next.history.len(), 2);
}

#[test]
fn logs_from_another_deployment_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    {
        let m = fixture_manager(Some(EventStore::open(dir.path()).unwrap()));
        m.create().unwrap();
    }
    let other = Deployment::new(&fixture_checkpoint(true), fixture_bank(), None).unwrap();
    let err = SessionManager::new(other, Some(EventStore::open(dir.path()).unwrap())).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    let shorter = Deployment::new(&fixture_checkpoint(false), fixture_bank(), Some(5)).unwrap();
    assert!(SessionManager::new(shorter, Some(EventStore::open(dir.path()).unwrap())).is_err());
}

#[test]
fn replay_is_pure() {
    let d = fixture_deployment();
    let events = golden_events(&d);
    assert_eq!(replay(&d, &events).unwrap(), replay(&d, &events).unwrap());
    assert!(replay(&d, &[]).is_err());
    assert!(replay(&d, &events[1..]).is_err());
}

#[test]
fn concealed_policy_ignores_outcomes_until_the_end() {
    let d = Deployment::new(&fixture_checkpoint(true), fixture_bank(), None).unwrap();
    let m = SessionManager::new(d, None).unwrap();
    let (a, b) = (m.create().unwrap(), m.create().unwrap());
    let (mut sa, mut sb) = (a.clone(), b.clone());
    for t in 0..HORIZON {
        assert_eq!(sa.recommended_item, sb.recommended_item, "step {t}");
        sa = m.submit(&a.id, 1, None).unwrap();
        sb = m.submit(&b.id, 0, None).unwrap();
    }
    let items = |s: &Session| s.history.iter().map(|t| t.item).collect::<Vec<_>>();
    assert_eq!(items(&sa), items(&sb));
    assert_ne!(sa.final_estimate(), sb.final_estimate());
}

fn golden_events(d: &Deployment) -> Vec<Event> {
    let mut events = vec![Event::Created {
        id: "golden".into(),
        at_ms: 1_700_000_000_000,
        horizon: HORIZON,
        checkpoint_sha256: d.checkpoint_sha256.clone(),
        bank_sha256: d.bank_sha256.clone(),
    }];
    for (step, &outcome) in GOLDEN_OUTCOMES.iter().enumerate() {
        events.push(Event::Response {
            step,
            outcome,
            at_ms: 1_700_000_000_000 + 1000 * (step as u64 + 1),
        });
    }
    events
}

/// Replays the checked-in transcript against the checked-in artifacts.
/// Every recommended item and trajectory value must match bit for bit.
#[test]
fn golden_transcript_replays_exactly() {
    let dir = golden_dir();
    let d = Deployment::load(dir.join("checkpoint.json"), dir.join("bank.json"), None).unwrap();
    let events = read_log(&dir.join("events.jsonl")).unwrap();
    let got = replay(&d, &events).unwrap();
    let want: Session = serde_json::from_str(&io::read_text(dir.join("expected_session.json")).unwrap()).unwrap();
    assert_eq!(got, want);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&got.trajectory), bits(&want.trajectory));
}

#[test]
fn golden_artifacts_round_trip_bit_exactly() {
    let dir = golden_dir();
    let ck_text = io::read_text(dir.join("checkpoint.json")).unwrap();
    assert_eq!(Checkpoint::from_json(&ck_text).unwrap().to_json(), ck_text);
    assert_eq!(fixture_checkpoint(false).to_json(), ck_text);
    let bank_text = io::read_text(dir.join("bank.json")).unwrap();
    assert_eq!(ItemBank::from_json(&bank_text).unwrap().to_json(), bank_text);
}

/// Rewrites the golden files. Run with `--ignored` only after an
/// intentional change to the policy, bank, or session format.
#[test]
#[ignore]
fn regenerate_golden_transcript() {
    let dir = golden_dir();
    let d = fixture_deployment();
    io::write_text(dir.join("checkpoint.json"), &fixture_checkpoint(false).to_json()).unwrap();
    io::write_text(dir.join("bank.json"), &fixture_bank().to_json()).unwrap();
    let events = golden_events(&d);
    let log: String = events
        .iter()
        .map(|e| serde_json::to_string(e).unwrap() + "\n")
        .collect();
    io::write_text(dir.join("events.jsonl"), &log).unwrap();
    let s = replay(&d, &events).unwrap();
    io::write_text(
        dir.join("expected_session.json"),
        &serde_json::to_string_pretty(&s).unwrap(),
    )
    .unwrap();
}
