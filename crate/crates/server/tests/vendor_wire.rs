use std::sync::{Arc, Mutex};

use chrono::Duration;
use spotarc::collector::{totals, CollectionSchedule, Collector};
use spotarc::model::{InstanceType, Zone};
use spotarc::planner::{plan_queries, shard_accounts, PlacementQuery, QueryPlan, DAILY_UNIQUE_QUERIES, RESULT_CAP};
use spotarc::sim::{Universe, VendorError, VendorSim};
use spotarc::store::{KeyFilter, Store};
use spotarc::vendor::Vendor;
use spotarc_server::{vendor_router, Background, HttpVendor};

fn sim() -> VendorSim {
    let u = Universe::full(&["m5.large", "c5.xlarge", "r5.large"], &[("us-east-1", 2), ("eu-west-1", 3)]);
    VendorSim::new(u, 11).unwrap()
}

fn facade(sim: VendorSim) -> (Background, HttpVendor) {
    let bg = Background::spawn(vendor_router(Arc::new(Mutex::new(sim)))).unwrap();
    let client = HttpVendor::new(&bg.url());
    (bg, client)
}

fn plan_for(sim: &VendorSim) -> QueryPlan {
    let queries = plan_queries(&sim.universe().support_map(), RESULT_CAP).unwrap();
    shard_accounts(queries, DAILY_UNIQUE_QUERIES).unwrap()
}

#[test]
fn wire_calls_match_in_process_calls() {
    let mut local = sim();
    let (_bg, mut remote) = facade(sim());
    assert_eq!(Vendor::catalog(&mut remote).unwrap(), Vendor::catalog(&mut local).unwrap());
    let t = local.start() + Duration::hours(30);
    Vendor::advance_to(&mut local, t).unwrap();
    remote.advance_to(t).unwrap();
    assert_eq!(remote.now().unwrap(), Vendor::now(&mut local).unwrap());

    let q = PlacementQuery {
        instance_types: vec!["m5.large".parse().unwrap()],
        regions: vec!["us-east-1".parse().unwrap(), "eu-west-1".parse().unwrap()],
        target_capacity: 3,
        single_az: true,
    };
    assert_eq!(remote.placement_scores("a", &q).unwrap(), local.placement_scores("a", &q).unwrap());
    assert_eq!(remote.advisor().unwrap(), Vendor::advisor(&mut local).unwrap());

    let (i, az): (InstanceType, Zone) = ("c5.xlarge".parse().unwrap(), "eu-west-1c".parse().unwrap());
    let from = local.start();
    assert_eq!(
        remote.price_history(&i, &az, from, t).unwrap(),
        Vendor::price_history(&mut local, &i, &az, from, t).unwrap()
    );

    let a = remote.submit_spot_request(&i, &az, 1.0, true).unwrap();
    let b = Vendor::submit_spot_request(&mut local, &i, &az, 1.0, true).unwrap();
    assert_eq!(a, b);
    let later = t + Duration::minutes(10);
    remote.advance_to(later).unwrap();
    Vendor::advance_to(&mut local, later).unwrap();
    assert_eq!(remote.spot_request(a.id).unwrap(), Vendor::spot_request(&mut local, b.id).unwrap());
}

#[test]
fn vendor_errors_survive_the_wire() {
    let (_bg, mut remote) = facade(sim());
    let i: InstanceType = "m5.large".parse().unwrap();
    let bad_type: InstanceType = "p3.2xlarge".parse().unwrap();
    let az: Zone = "us-east-1a".parse().unwrap();
    assert_eq!(
        remote.submit_spot_request(&bad_type, &az, 1.0, false),
        Err(VendorError::UnknownType("p3.2xlarge".into()))
    );
    assert_eq!(remote.submit_spot_request(&i, &az, -1.0, false), Err(VendorError::InvalidBid(-1.0)));
    assert_eq!(remote.spot_request(999), Err(VendorError::UnknownRequest(999)));
    let t = remote.now().unwrap();
    assert_eq!(
        remote.price_history(&i, &az, t, t - Duration::hours(1)),
        Err(VendorError::RangeInverted)
    );
    for cap in 1..=DAILY_UNIQUE_QUERIES as u32 {
        let q = PlacementQuery {
            instance_types: vec![i.clone()],
            regions: vec![az.region()],
            target_capacity: cap,
            single_az: true,
        };
        remote.placement_scores("acct", &q).unwrap();
    }
    let q = PlacementQuery {
        instance_types: vec![i.clone()],
        regions: vec![az.region()],
        target_capacity: 99,
        single_az: true,
    };
    assert_eq!(
        remote.placement_scores("acct", &q),
        Err(VendorError::QueryBudgetExhausted {
            account: "acct".into(),
            limit: DAILY_UNIQUE_QUERIES
        })
    );
}

#[test]
fn unreachable_vendor_is_a_transport_error() {
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let mut remote = HttpVendor::new(&format!("http://127.0.0.1:{port}"));
    assert!(matches!(remote.now(), Err(VendorError::Transport(_))));
}

#[test]
fn collector_over_the_wire_archives_what_it_would_in_process() {
    let mut local = sim();
    let plan = plan_for(&local);
    let (_bg, mut remote) = facade(sim());
    let end = local.start() + Duration::hours(6);

    let local_store = Store::in_memory();
    let mut c = Collector::new(CollectionSchedule::every(600, plan.clone()), &mut local).unwrap();
    let local_reports = c.run_loop(&mut local, &local_store, end).unwrap();

    let remote_store = Store::in_memory();
    let mut c = Collector::new(CollectionSchedule::every(600, plan), &mut remote).unwrap();
    let remote_reports = c.run_loop(&mut remote, &remote_store, end).unwrap();

    assert_eq!(remote_reports, local_reports);
    assert_eq!(totals(&remote_reports).budget_exhaustions, 0);
    let (from, to) = local_store.span().unwrap();
    let all = KeyFilter::all();
    assert_eq!(remote_store.query(&all, from, to).unwrap(), local_store.query(&all, from, to).unwrap());
    assert!(!local_store.is_empty());
}
