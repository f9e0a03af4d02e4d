//! Seeded Monte Carlo checks. Tolerances are several standard errors wide.

use banditcat::irt::{fisher_info, irf_3pl, ItemParams, KernelParams, ThetaGrid};
use banditcat::posterior::{Posterior, PriorSpec};
use banditcat::rng;
use banditcat::selector::{average_rewards, randomize_2pl, randomize_3pl_height};
use banditcat::session::{Stage, TagRule};
use banditcat::simulation::{synthetic_bank, SyntheticBankSpec};
use banditcat::{Blueprint, Item, ItemBank, SelectorConfig, SessionConfig, SessionState};
use rand::Rng;

fn item(id: &str, a: f64, d: f64, tags: &[&str]) -> Item {
    Item {
        item_id: id.into(),
        item_type: "t".into(),
        tags: tags.iter().map(|s| s.to_string()).collect(),
        params: ItemParams::two_pl(a, d).unwrap(),
        kernel: KernelParams::new(a * a / 4.0, d, 1.8 / a).unwrap(),
    }
}

#[test]
fn randomization_preserves_the_mean() {
    let n = 200_000;
    for a in [0.2, 1.0, 5.0] {
        for gamma in [0.01, 0.5, 2.0] {
            let p = ItemParams::two_pl(a, 0.0).unwrap();
            let k = KernelParams::new(a, 0.0, 1.0).unwrap();
            let mut r = rng::stream(11, "mean", (a * 100.0 + gamma * 1000.0) as u64);
            let se = (a * gamma / n as f64).sqrt();
            let m2: f64 = (0..n).map(|_| randomize_2pl(&p, gamma, &mut r).unwrap()).sum::<f64>() / n as f64;
            let mk: f64 = (0..n).map(|_| randomize_3pl_height(&k, gamma, &mut r).unwrap()).sum::<f64>() / n as f64;
            assert!((m2 - a).abs() < 4.5 * se, "a={a} gamma={gamma} mean={m2}");
            assert!((mk - a).abs() < 4.5 * se, "h={a} gamma={gamma} mean={mk}");
        }
    }
}

#[test]
fn averaged_reward_converges_to_expected_information() {
    let grid = ThetaGrid::default();
    let post = [(0.8, true), (1.2, false), (1.5, true)]
        .iter()
        .try_fold(Posterior::prior(grid, &PriorSpec::StandardNormal).unwrap(), |p, &(d, y)| {
            p.update(&ItemParams::two_pl(1.3, d).unwrap(), y)
        })
        .unwrap();
    let items = [item("x", 1.4, 0.3, &[]), item("y", 0.7, -1.0, &[]), item("z", 2.2, 2.0, &[])];
    let refs: Vec<&Item> = items.iter().collect();
    let cfg = SelectorConfig { k_draws: 400_000, randomize: false, ..Default::default() };
    let mut r = rng::stream(5, "k", 0);
    let got = average_rewards(&refs, &post, &cfg, &mut r).unwrap();
    for (it, g) in items.iter().zip(got) {
        let exact: f64 = grid
            .points()
            .zip(post.mass())
            .map(|(t, m)| m * fisher_info(t, &it.params))
            .sum();
        assert!((g / exact - 1.0).abs() < 0.01, "{} {g} vs {exact}", it.item_id);
    }
}

#[test]
fn posterior_concentrates_on_the_true_ability() {
    let grid = ThetaGrid::default();
    let spec = SyntheticBankSpec { items: 60, ..Default::default() };
    let bank = synthetic_bank(&spec, 3).unwrap();
    let mut r = rng::stream(9, "conc", 0);
    let trials = 500;
    let mut covered = 0;
    let mut shrank = 0;
    for _ in 0..trials {
        let theta: f64 = r.random_range(-2.0..2.0);
        let mut post = Posterior::prior(grid, &PriorSpec::StandardNormal).unwrap();
        let before = post.variance();
        for it in &bank {
            let y = r.random::<f64>() < irf_3pl(theta, &it.params);
            post = post.update(&it.params, y).unwrap();
        }
        shrank += (post.variance() < before / 5.0) as usize;
        covered += ((post.mean() - theta).abs() < 2.0 * post.variance().sqrt()) as usize;
    }
    assert_eq!(shrank, trials);
    // nominal two-sigma coverage is about 95%
    let rate = covered as f64 / trials as f64;
    assert!((0.91..=0.99).contains(&rate), "coverage {rate}");
}

#[test]
fn fair_tag_draw_splits_evenly() {
    let mut items: Vec<Item> = (0..10).map(|i| item(&format!("r{i}"), 1.0, 0.0, &["real"])).collect();
    items.extend((0..10).map(|i| item(&format!("f{i}"), 1.0, 0.0, &["fake"])));
    let bank = ItemBank::new(items).unwrap();
    let bp = Blueprint {
        stages: vec![Stage {
            item_type: "t".into(),
            count: 3,
            time_limit_seconds: 5.0,
            tag_rule: TagRule::BernoulliHalf { tags: ("real".into(), "fake".into()) },
        }],
    };
    let cfg = SessionConfig::default();
    let n = 10_000;
    let mut real = 0;
    for i in 0..n {
        let mut s = SessionState::start(format!("s{i}"), &bp, &bank, &cfg, rng::derive_seed(4, "tag", i), None).unwrap();
        let p = s.next_item(&bank, None).unwrap();
        assert!(!p.tag_fallback);
        let tag = p.tag.unwrap();
        assert!(bank.get(&p.item_id).unwrap().has_tag(&tag));
        real += (tag == "real") as usize;
    }
    let share = real as f64 / n as f64;
    assert!((share - 0.5).abs() <= 0.02, "real share {share}");
}
