//! Template-based synthetic restaurant-search corpus with an attached
//! knowledge base.
//!
//! Each session picks a target entity. The user reveals every informable
//! value of the target across one or more turns, possibly stating a wrong
//! value first and correcting it later, may then ask for requestable
//! attributes, and may close with a thank-you turn. The system asks for the
//! first missing slot in schema order until all are known, then offers the
//! first matching entity by id and answers requests about it.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    delexicalize, lexicalize, DialogueSession, Entity, InformableSlot, KnowledgeBase, SlotSchema,
    StateAnnotation, Turn, NAME_ATTR,
};
use crate::{Error, Result};

const FOOD: [&str; 20] = [
    "italian", "thai", "chinese", "indian", "french", "mexican", "japanese", "korean", "spanish",
    "greek", "turkish", "lebanese", "vietnamese", "british", "german", "portuguese", "moroccan",
    "persian", "ethiopian", "brazilian",
];
const PRICE: [&str; 20] = [
    "cheap", "moderate", "expensive", "affordable", "pricey", "economical", "upscale", "luxury",
    "budget", "midrange", "lavish", "frugal", "inexpensive", "costly", "reasonable", "premium",
    "bargain", "fancy", "modest", "exclusive",
];
const AREA: [&str; 20] = [
    "north", "south", "east", "west", "centre", "riverside", "downtown", "uptown", "harbour",
    "oldtown", "midtown", "lakeside", "hillside", "parkside", "university", "station", "market",
    "airport", "suburbs", "castle",
];
const REQUESTABLE: [&str; 3] = ["phone", "address", "postcode"];

const NAME_FIRST: [&str; 12] = [
    "golden", "silver", "blue", "red", "little", "royal", "happy", "lucky", "green", "grand",
    "old", "jade",
];
const NAME_SECOND: [&str; 10] = [
    "dragon", "lotus", "olive", "garden", "lantern", "kitchen", "table", "spoon", "orchid", "bistro",
];
const STREETS: [&str; 8] = [
    "mill", "bridge", "regent", "king", "hills", "mere", "station", "chesterton",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub slots: usize,
    pub values_per_slot: usize,
    pub entities: usize,
    pub sessions: usize,
    pub min_turns: usize,
    pub max_turns: usize,
    /// Paraphrase templates used per dialogue act.
    pub paraphrases: usize,
    pub revision_prob: f64,
    /// Chance that a request turn asks for two attributes instead of one.
    pub double_request_prob: f64,
    pub thanks_prob: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            slots: 3,
            values_per_slot: 20,
            entities: 60,
            sessions: 800,
            min_turns: 1,
            max_turns: 4,
            paraphrases: 3,
            revision_prob: 0.3,
            double_request_prob: 0.3,
            thanks_prob: 0.5,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Generation(m));
        if self.slots == 0 || self.values_per_slot < 2 {
            return fail("need at least one slot with two values".into());
        }
        if self.entities == 0 || self.entities < self.values_per_slot {
            return fail(format!(
                "{} entities cannot cover {} values per slot",
                self.entities, self.values_per_slot
            ));
        }
        if self.min_turns == 0 || self.min_turns > self.max_turns {
            return fail(format!(
                "turn range {}..={} is empty",
                self.min_turns, self.max_turns
            ));
        }
        if !(1..=MAX_PARAPHRASES).contains(&self.paraphrases) {
            return fail(format!("paraphrases must be in 1..={MAX_PARAPHRASES}"));
        }
        for p in [self.revision_prob, self.double_request_prob, self.thanks_prob] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("probability {p} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

const MAX_PARAPHRASES: usize = 3;

fn slot_values(slot: usize, n: usize) -> (String, Vec<String>) {
    let (name, base): (String, &[&str]) = match slot {
        0 => ("food".into(), &FOOD),
        1 => ("pricerange".into(), &PRICE),
        2 => ("area".into(), &AREA),
        k => (format!("slot{k}"), &[]),
    };
    let values = (0..n)
        .map(|i| match base.get(i) {
            Some(v) => v.to_string(),
            None => format!("{name}_v{i}"),
        })
        .collect();
    (name, values)
}

pub fn default_schema(cfg: &GenConfig) -> Result<SlotSchema> {
    let informable = (0..cfg.slots)
        .map(|k| {
            let (name, values) = slot_values(k, cfg.values_per_slot);
            InformableSlot { name, values }
        })
        .collect();
    SlotSchema::new(informable, REQUESTABLE.iter().map(|s| s.to_string()).collect())
}

/// Short phrase naming a constraint, used in both user and system turns.
fn describe(slot: &str, value: &str, variant: usize) -> String {
    match (slot, variant % 3) {
        ("food", 0) => format!("{value} food"),
        ("food", 1) => format!("{value} cuisine"),
        ("food", _) => format!("serving {value} food"),
        ("pricerange", 0) => format!("in the {value} price range"),
        ("pricerange", 1) => format!("{value} priced"),
        ("pricerange", _) => format!("something {value}"),
        ("area", 0) => format!("in the {value} area"),
        ("area", 1) => format!("located in the {value}"),
        ("area", _) => format!("somewhere {value}"),
        (s, 0) => format!("with {s} {value}"),
        (s, 1) => format!("where {s} is {value}"),
        (s, _) => format!("{s} {value}"),
    }
}

fn restate(slot: &str, value: &str) -> String {
    match slot {
        "food" => format!("{value} food"),
        "pricerange" => format!("{value} price"),
        "area" => format!("the {value} area"),
        s => format!("{s} {value}"),
    }
}

fn ask(slot: &str, variant: usize) -> String {
    match (slot, variant) {
        ("food", 0) => "what type of food would you like".into(),
        ("food", 1) => "what kind of food do you want".into(),
        ("food", _) => "which cuisine do you prefer".into(),
        ("pricerange", 0) => "what price range would you like".into(),
        ("pricerange", 1) => "how much would you like to spend".into(),
        ("pricerange", _) => "which price range do you prefer".into(),
        ("area", 0) => "which area would you like".into(),
        ("area", 1) => "what part of town do you want".into(),
        ("area", _) => "where would you like to eat".into(),
        (s, 0) => format!("which {s} would you like"),
        (s, 1) => format!("what {s} do you want"),
        (s, _) => format!("do you have a {s} in mind"),
    }
}

fn request_phrase(req: &str) -> String {
    match req {
        "phone" => "phone number".into(),
        r => r.to_string(),
    }
}

fn entity_attrs(rng: &mut ChaCha8Rng, schema: &SlotSchema, id: usize) -> BTreeMap<String, String> {
    let mut attrs = BTreeMap::new();
    for (k, slot) in schema.informable.iter().enumerate() {
        // Spread every value over the entities before sampling freely.
        let v = if id < slot.values.len() {
            (id * (k + 1)) % slot.values.len()
        } else {
            rng.gen_range(0..slot.values.len())
        };
        attrs.insert(slot.name.clone(), slot.values[v].clone());
    }
    let name = format!(
        "{} {} {}",
        NAME_FIRST[id % NAME_FIRST.len()],
        NAME_SECOND[(id / NAME_FIRST.len()) % NAME_SECOND.len()],
        id / (NAME_FIRST.len() * NAME_SECOND.len()) + 1
    );
    attrs.insert(NAME_ATTR.into(), name);
    attrs.insert(
        "phone".into(),
        format!("01223 {:06}", rng.gen_range(0..1_000_000u32)),
    );
    attrs.insert(
        "address".into(),
        format!(
            "{} {} road",
            rng.gen_range(1..200u32),
            STREETS[rng.gen_range(0..STREETS.len())]
        ),
    );
    attrs.insert(
        "postcode".into(),
        format!("cb{} {}{}", rng.gen_range(1..6u32), rng.gen_range(1..10u32), ["aa", "bd", "eq", "hr"][rng.gen_range(0..4)]),
    );
    attrs
}

/// What the user does in one turn.
#[derive(Clone, Debug, Default)]
struct UserAct {
    inform: Vec<(usize, String)>,
    revise: Option<(usize, String)>,
    request: Vec<String>,
    thanks: bool,
}

struct Generator<'a> {
    cfg: &'a GenConfig,
    schema: &'a SlotSchema,
    kb: &'a KnowledgeBase,
    rng: ChaCha8Rng,
}

impl Generator<'_> {
    fn pick(&mut self) -> usize {
        self.rng.gen_range(0..self.cfg.paraphrases)
    }

    fn plan(&mut self, target: &Entity) -> Vec<UserAct> {
        let n_slots = self.schema.informable.len();
        let turns = self.rng.gen_range(self.cfg.min_turns..=self.cfg.max_turns);
        let inform_turns = self.rng.gen_range(1..=turns.min(n_slots));
        let mut order: Vec<usize> = (0..n_slots).collect();
        order.shuffle(&mut self.rng);
        // Cut the shuffled slots into `inform_turns` nonempty groups.
        let mut cuts: Vec<usize> = (1..n_slots).collect();
        cuts.shuffle(&mut self.rng);
        let mut cuts: Vec<usize> = cuts[..inform_turns - 1].to_vec();
        cuts.sort_unstable();
        cuts.push(n_slots);
        let mut acts = Vec::new();
        let mut start = 0;
        for &end in &cuts {
            let inform = order[start..end]
                .iter()
                .map(|&k| (k, target.attrs[&self.schema.informable[k].name].clone()))
                .collect();
            acts.push(UserAct {
                inform,
                ..UserAct::default()
            });
            start = end;
        }
        if inform_turns >= 2 && self.rng.gen_bool(self.cfg.revision_prob) {
            // A value given before the last inform turn is first stated wrongly.
            let first = self.rng.gen_range(0..inform_turns - 1);
            let pos = self.rng.gen_range(0..acts[first].inform.len());
            let (slot, right) = acts[first].inform[pos].clone();
            let values = &self.schema.informable[slot].values;
            let wrong = loop {
                let v = &values[self.rng.gen_range(0..values.len())];
                if *v != right {
                    break v.clone();
                }
            };
            acts[first].inform[pos].1 = wrong;
            let later = self.rng.gen_range(first + 1..inform_turns);
            acts[later].revise = Some((slot, right));
        }
        let mut rest = turns - inform_turns;
        if rest > 0 && self.rng.gen_bool(self.cfg.thanks_prob) {
            rest -= 1;
            acts.extend((0..rest).map(|_| UserAct::default()));
            acts.push(UserAct {
                thanks: true,
                ..UserAct::default()
            });
        } else {
            acts.extend((0..rest).map(|_| UserAct::default()));
        }
        for act in acts[inform_turns..].iter_mut().filter(|a| !a.thanks) {
            let mut reqs: Vec<String> = REQUESTABLE.iter().map(|s| s.to_string()).collect();
            reqs.shuffle(&mut self.rng);
            let k = if self.rng.gen_bool(self.cfg.double_request_prob) { 2 } else { 1 };
            act.request = reqs[..k].to_vec();
        }
        acts
    }

    fn user_text(&mut self, act: &UserAct) -> String {
        if act.thanks {
            return ["thank you goodbye", "thanks that is all", "great thanks bye"][self.pick()].into();
        }
        let mut parts = Vec::new();
        if let Some((slot, v)) = &act.revise {
            let d = describe(&self.schema.informable[*slot].name, v, self.pick());
            parts.push(
                [
                    format!("actually i want {d} instead"),
                    format!("sorry , make that {d}"),
                    format!("i changed my mind , {d}"),
                ][self.pick()]
                .clone(),
            );
        }
        if !act.inform.is_empty() {
            let descs: Vec<String> = act
                .inform
                .iter()
                .map(|(k, v)| describe(&self.schema.informable[*k].name, v, self.pick()))
                .collect();
            let body = descs.join(" and ");
            let opener = ["i am looking for a restaurant", "i want a place", "find me something"]
                [self.pick()];
            parts.push(if act.revise.is_some() {
                format!("and {body}")
            } else {
                format!("{opener} {body}")
            });
        }
        if !act.request.is_empty() {
            let r: Vec<String> = act.request.iter().map(|r| request_phrase(r)).collect();
            let r = r.join(" and ");
            parts.push(
                [
                    format!("what is the {r}"),
                    format!("can i have the {r}"),
                    format!("please tell me the {r}"),
                ][self.pick()]
                .clone(),
            );
        }
        parts.join(" ")
    }

    fn response(&mut self, act: &UserAct, state: &StateAnnotation) -> String {
        if act.thanks {
            return [
                "you are welcome goodbye",
                "glad i could help goodbye",
                "enjoy your meal goodbye",
            ][self.pick()]
            .into();
        }
        if !act.request.is_empty() {
            let answers: Vec<String> = self
                .schema
                .requestable
                .iter()
                .filter(|r| state.req.contains(r))
                .map(|r| format!("the {} is {}", request_phrase(r), SlotSchema::placeholder(r)))
                .collect();
            let a = answers.join(" and ");
            return [
                a.clone(),
                format!("sure , {a}"),
                format!("for name_SLOT {a}"),
            ][self.pick()]
            .clone();
        }
        let known: Vec<String> = self
            .schema
            .informable
            .iter()
            .filter_map(|s| state.inf.get(&s.name).map(|v| restate(&s.name, v)))
            .collect();
        let known = known.join(" and ");
        match self
            .schema
            .informable
            .iter()
            .find(|s| !state.inf.contains_key(&s.name))
        {
            Some(missing) => {
                let q = ask(&missing.name, self.pick());
                [
                    format!("ok , {known} . {q}"),
                    format!("i can help with {known} . {q}"),
                    format!("sure , {known} . {q}"),
                ][self.pick()]
                .clone()
            }
            None => [
                format!("name_SLOT serves {known}"),
                format!("i recommend name_SLOT , it has {known}"),
                format!("how about name_SLOT ? it offers {known}"),
            ][self.pick()]
            .clone(),
        }
    }

    fn session(&mut self, id: usize) -> Result<DialogueSession> {
        let chosen = &self.kb.entities[self.rng.gen_range(0..self.kb.entities.len())];
        let acts = self.plan(chosen);
        let mut state = StateAnnotation::default();
        let mut final_state = StateAnnotation::default();
        for act in &acts {
            for (k, v) in act.inform.iter().chain(&act.revise) {
                final_state.inf.insert(self.schema.informable[*k].name.clone(), v.clone());
            }
        }
        let target = self
            .kb
            .search(&final_state.inf)
            .first()
            .map(|e| (*e).clone())
            .ok_or_else(|| Error::Generation("target constraints match no entity".into()))?;
        let mut turns = Vec::with_capacity(acts.len());
        for act in &acts {
            for (k, v) in act.inform.iter().chain(&act.revise) {
                state.inf.insert(self.schema.informable[*k].name.clone(), v.clone());
            }
            for r in &act.request {
                if !state.req.contains(r) {
                    state.req.push(r.clone());
                }
            }
            state
                .req
                .sort_by_key(|r| self.schema.requestable.iter().position(|x| x == r));
            let user = self.user_text(act);
            let resp_delex = self.response(act, &state);
            let resp_surface = lexicalize(&resp_delex, &target);
            debug_assert_eq!(delexicalize(&resp_surface, &target, self.schema), resp_delex);
            turns.push(Turn {
                user,
                resp_delex,
                resp_surface,
                state: Some(state.clone()),
                thanks: act.thanks,
            });
        }
        Ok(DialogueSession {
            id: format!("s{id:05}"),
            turns,
            target_entity: Some(target.id),
        })
    }
}

/// Builds the knowledge base and `cfg.sessions` fully annotated sessions.
pub fn generate_synthetic_corpus(
    cfg: &GenConfig,
    seed: u64,
) -> Result<(Vec<DialogueSession>, KnowledgeBase)> {
    cfg.validate()?;
    let schema = default_schema(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entities = (0..cfg.entities)
        .map(|id| Entity {
            id,
            attrs: entity_attrs(&mut rng, &schema, id),
        })
        .collect();
    let kb = KnowledgeBase::new(schema.clone(), entities)?;
    let mut gen = Generator {
        cfg,
        schema: &schema,
        kb: &kb,
        rng,
    };
    let sessions = (0..cfg.sessions)
        .map(|i| gen.session(i))
        .collect::<Result<Vec<_>>>()?;
    Ok((sessions, kb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{corpus_to_string, parse_corpus};

    fn small() -> GenConfig {
        GenConfig {
            sessions: 120,
            ..GenConfig::default()
        }
    }

    #[test]
    fn seeded_generation_is_byte_identical() {
        let (a, ka) = generate_synthetic_corpus(&small(), 9).unwrap();
        let (b, kb) = generate_synthetic_corpus(&small(), 9).unwrap();
        assert_eq!(corpus_to_string(&a).unwrap(), corpus_to_string(&b).unwrap());
        assert_eq!(ka.to_file_string().unwrap(), kb.to_file_string().unwrap());
        let (c, _) = generate_synthetic_corpus(&small(), 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn round_trip_is_exact() {
        let (s, kb) = generate_synthetic_corpus(&small(), 3).unwrap();
        let text = corpus_to_string(&s).unwrap();
        let back = parse_corpus(&text, &kb.schema).unwrap();
        assert_eq!(back, s);
        assert_eq!(corpus_to_string(&back).unwrap(), text);
        let kb2 = KnowledgeBase::from_file_str(&kb.to_file_string().unwrap()).unwrap();
        assert_eq!(kb2, kb);
    }

    #[test]
    fn gold_values_appear_in_earlier_user_turns() {
        let (sessions, _) = generate_synthetic_corpus(&small(), 5).unwrap();
        for s in &sessions {
            for (t, turn) in s.turns.iter().enumerate() {
                let seen: Vec<&str> = s.turns[..=t]
                    .iter()
                    .flat_map(|u| u.user.split_whitespace())
                    .collect();
                for v in turn.state.as_ref().unwrap().inf.values() {
                    assert!(seen.contains(&v.as_str()), "{} turn {t}: {v}", s.id);
                }
            }
        }
    }

    #[test]
    fn final_state_is_accumulated_reveals() {
        // Oracle: replay every user turn left to right, letting the last
        // mention of a slot win.
        let (sessions, kb) = generate_synthetic_corpus(&small(), 6).unwrap();
        let mut revisions = 0;
        for s in &sessions {
            let mut acc = BTreeMap::new();
            for turn in &s.turns {
                let toks: Vec<&str> = turn.user.split_whitespace().collect();
                let revising = toks.first() == Some(&"actually")
                    || toks.first() == Some(&"sorry")
                    || toks.first() == Some(&"i") && toks.get(1) == Some(&"changed");
                for tok in toks {
                    if let Some(k) = kb.schema.slot_of_value(tok) {
                        let name = &kb.schema.informable[k].name;
                        if revising && acc.contains_key(name) {
                            revisions += 1;
                        }
                        acc.insert(name.clone(), tok.to_string());
                    }
                }
                assert_eq!(turn.state.as_ref().unwrap().inf, acc, "{}", s.id);
            }
            let target = kb.get(s.target_entity.unwrap()).unwrap();
            assert!(target.satisfies(&acc));
            assert_eq!(kb.search(&acc)[0].id, target.id);
        }
        assert!(revisions > 0);
    }

    #[test]
    fn defaults_and_shape() {
        let cfg = GenConfig::default();
        assert_eq!(cfg.sessions, 800);
        let (sessions, kb) = generate_synthetic_corpus(&cfg, 1).unwrap();
        assert_eq!(sessions.len(), 800);
        assert_eq!(kb.schema.informable.len(), 3);
        assert!(kb.schema.informable.iter().all(|s| s.values.len() == 20));
        assert!(sessions.iter().all(|s| (1..=4).contains(&s.turns.len())));
        assert!(sessions.iter().any(|s| s.turns.iter().any(|t| t.thanks)));
        for s in &sessions {
            let e = kb.get(s.target_entity.unwrap()).unwrap();
            for t in &s.turns {
                assert_eq!(lexicalize(&delexicalize(&t.resp_surface, e, &kb.schema), e), t.resp_surface);
            }
        }
    }

    #[test]
    fn unsatisfiable_config_is_rejected() {
        let cfg = GenConfig {
            entities: 5,
            ..GenConfig::default()
        };
        assert!(matches!(
            generate_synthetic_corpus(&cfg, 1),
            Err(Error::Generation(_))
        ));
    }
}
