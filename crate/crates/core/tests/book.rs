mod common;

use common::{random_stream, NaiveBook};
use mars_core::book::{mid_price, LimitOrderBook, MatchWarning, MidPrice, Order, Side};
use proptest::prelude::*;

fn book_with(orders: &[Order]) -> LimitOrderBook {
    let mut book = LimitOrderBook::new();
    for o in orders {
        book.submit(o).unwrap();
    }
    book
}

#[test]
fn bid_into_empty_book_rests() {
    let mut book = LimitOrderBook::new();
    let r = book.submit(&Order::bid(1, 1000, 100)).unwrap();
    assert!(r.trades.is_empty());
    let snap = book.snapshot();
    assert_eq!((snap.bids[0].price, snap.bids[0].volume), (1000, 100));
    assert!(snap.asks.is_empty());
}

#[test]
fn partial_fill_leaves_remainder_resting() {
    let mut book = book_with(&[Order::ask(1, 1002, 50)]);
    let r = book.submit(&Order::bid(2, 1002, 80)).unwrap();
    assert_eq!(r.trades.iter().map(|t| (t.volume, t.price)).collect::<Vec<_>>(), [(50, 1002)]);
    assert_eq!(book.best_bid(), Some(1002));
    assert_eq!(book.side_volume_at(Side::Bid, 1002), 30);
    assert_eq!(book.best_ask(), None);
}

#[test]
fn sweep_walks_levels_in_price_order() {
    let mut book = book_with(&[Order::ask(1, 1001, 30), Order::ask(2, 1002, 40)]);
    let r = book.submit(&Order::bid(3, 1002, 100)).unwrap();
    assert_eq!(r.trades.iter().map(|t| (t.volume, t.price)).collect::<Vec<_>>(), [(30, 1001), (40, 1002)]);
    assert_eq!(book.side_volume_at(Side::Bid, 1002), 30);
}

#[test]
fn price_cancel_takes_oldest_first() {
    let mut book = book_with(&[Order::bid(1, 1000, 60), Order::bid(2, 1000, 40)]);
    let r = book.submit(&Order::cancel(3, 1000, 70)).unwrap();
    assert_eq!(r.cancelled, 70);
    assert!(!book.is_resting(1));
    assert_eq!(book.remaining(2), Some(30));
}

#[test]
fn cancel_at_empty_level_warns() {
    let mut book = LimitOrderBook::new();
    let r = book.submit(&Order::cancel(1, 999, 50)).unwrap();
    assert!(!r.accepted);
    assert_eq!(r.warnings, [MatchWarning::NothingToCancel { price: 999 }]);
}

#[test]
fn over_cancel_removes_everything_and_warns() {
    let mut book = book_with(&[Order::bid(1, 1000, 100)]);
    let r = book.submit(&Order::cancel(2, 1000, 500)).unwrap();
    assert_eq!(r.cancelled, 100);
    assert_eq!(r.warnings, [MatchWarning::PartialCancel { price: 1000, requested: 500, removed: 100 }]);
    assert!(book.is_empty());
}

#[test]
fn snapshot_and_mid_rules() {
    assert_eq!(LimitOrderBook::new().snapshot().bids.len(), 0);
    let one_sided = book_with(&[Order::bid(1, 1000, 100)]);
    assert!(one_sided.snapshot().mid().is_none());
    assert_eq!(mid_price(&one_sided.snapshot(), Some(1001)).unwrap().twice(), 2002);
    assert!(mid_price(&LimitOrderBook::new().snapshot(), None).is_err());

    let two_sided = book_with(&[Order::bid(1, 1000, 100), Order::ask(2, 1002, 100)]);
    let snap = two_sided.snapshot();
    assert_eq!(snap.spread(), Some(2));
    assert_eq!(snap.mid(), Some(MidPrice::from_twice(2002)));
}

#[test]
fn snapshot_is_capped_at_ten_levels() {
    let orders: Vec<Order> = (0..15).map(|i| Order::bid(i + 1, 900 + i as i64, 10)).collect();
    let snap = book_with(&orders).snapshot();
    assert_eq!(snap.bids.len(), 10);
    assert_eq!(snap.bids[0].price, 914);
    assert!(snap.bids.windows(2).all(|w| w[0].price > w[1].price));
}

#[test]
fn reference_matcher_agrees_on_a_long_stream() {
    let stream = random_stream(99, 20_000, 40);
    let mut fast = LimitOrderBook::new();
    let mut naive = NaiveBook::new();
    for o in &stream {
        assert_eq!(fast.submit(o), naive.submit(o), "order {}", o.id);
    }
    assert_eq!(fast.resting_order_count(), naive.resting_count());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn books_agree_with_the_reference(seed in any::<u64>(), max_live in 2usize..60) {
        let stream = random_stream(seed, 2_000, max_live);
        let mut fast = LimitOrderBook::new();
        let mut naive = NaiveBook::new();
        for o in &stream {
            prop_assert_eq!(fast.submit(o), naive.submit(o));
            if let (Some(b), Some(a)) = (fast.best_bid(), fast.best_ask()) {
                prop_assert!(b < a, "crossed book");
            }
        }
        for side in [Side::Bid, Side::Ask] {
            let best = match side { Side::Bid => fast.best_bid(), Side::Ask => fast.best_ask() };
            prop_assert_eq!(best, naive.best(side));
            for price in 985..=1015 {
                prop_assert_eq!(fast.side_volume_at(side, price), naive.volume(side, price));
            }
        }
    }

    #[test]
    fn volume_is_conserved(seed in any::<u64>()) {
        let stream = random_stream(seed, 1_000, 30);
        let mut book = LimitOrderBook::new();
        let (mut added, mut traded, mut cancelled) = (0u64, 0u64, 0u64);
        for o in &stream {
            let Ok(r) = book.submit(o) else { continue };
            if o.kind != mars_core::book::OrderKind::Cancel {
                added += o.volume;
            }
            traded += r.traded_volume();
            cancelled += r.cancelled;
        }
        let snap = book.snapshot_depth(usize::MAX);
        let resting = snap.bid_depth() + snap.ask_depth();
        prop_assert_eq!(added, resting + 2 * traded + cancelled);
    }
}
