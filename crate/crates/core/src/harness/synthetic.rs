//! Templated question/SQL pairs over the bundled schemas.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::schema::{parse_tables, SchemaGraph, TrainExample};

/// The bundled `tables.json` (schemas `soccer`, `concert`, `college`).
pub const BUNDLED_TABLES: &str = include_str!("../../data/tables.json");

/// Bundled golden corpus of `{db_id, sql}` records.
pub const BUNDLED_GOLDEN: &str = include_str!("../../data/golden.json");

pub fn bundled_schemas() -> Vec<SchemaGraph> {
    parse_tables(BUNDLED_TABLES).expect("bundled tables.json is valid")
}

/// Column roles the templates refer to, per schema.
struct Profile {
    db: &'static str,
    /// Main table, its name column, a numeric column and a categorical column.
    t: &'static str,
    c: &'static str,
    n: &'static str,
    g: &'static str,
    k: &'static str,
    /// Child table with a foreign key `fk` to `t.k` and a numeric column.
    u: &'static str,
    fk: &'static str,
    un: &'static str,
    /// Table with two numeric columns for arithmetic and a label column.
    pt: &'static str,
    pa: &'static str,
    pb: &'static str,
    pl: &'static str,
    strings: &'static [&'static str],
    numbers: &'static [i64],
}

const PROFILES: [Profile; 3] = [
    Profile {
        db: "soccer",
        t: "team",
        c: "name",
        n: "founded",
        g: "city",
        k: "team_id",
        u: "match_season",
        fk: "team_id",
        un: "wins",
        pt: "match_season",
        pa: "goals_for",
        pb: "goals_against",
        pl: "year",
        strings: &["London", "Madrid", "Milan", "Lyon"],
        numbers: &[1900, 1920, 1950, 1980],
    },
    Profile {
        db: "concert",
        t: "stadium",
        c: "name",
        n: "capacity",
        g: "location",
        k: "stadium_id",
        u: "concert",
        fk: "stadium_id",
        un: "year",
        pt: "stadium",
        pa: "capacity",
        pb: "average",
        pl: "name",
        strings: &["Glasgow", "Dundee", "Perth", "Ayr"],
        numbers: &[2000, 5000, 10000, 20000],
    },
    Profile {
        db: "college",
        t: "course",
        c: "title",
        n: "credits",
        g: "dept",
        k: "course_id",
        u: "enrolled",
        fk: "course_id",
        un: "grade",
        pt: "student",
        pa: "age",
        pb: "stu_id",
        pl: "lname",
        strings: &["Physics", "History", "Biology", "Art"],
        numbers: &[2, 3, 4, 5],
    },
];

/// `(question, sql)` templates. `{x}` is an identifier, `{xw}` its words,
/// `{v}`/`{v2}` numbers with `v < v2`, `{s}`/`{s2}` distinct strings.
const TEMPLATES: &[(&str, &str)] = &[
    ("list the {cw} of all {tw}", "SELECT {c} FROM {t}"),
    ("how many {tw} are there", "SELECT count(*) FROM {t}"),
    ("maximum and minimum {nw} of {tw}", "SELECT max({n}), min({n}) FROM {t}"),
    ("total and average {nw} of {tw}", "SELECT sum({n}), avg({n}) FROM {t}"),
    ("distinct {gw} of {tw}", "SELECT DISTINCT {g} FROM {t}"),
    ("number of different {gw} of {tw}", "SELECT count(DISTINCT {g}) FROM {t}"),
    ("{cw} of {tw} with {nw} greater than {v}", "SELECT {c} FROM {t} WHERE {n} > {v}"),
    ("{cw} of {tw} with {nw} less than {v}", "SELECT {c} FROM {t} WHERE {n} < {v}"),
    ("{cw} of {tw} with {nw} at least {v}", "SELECT {c} FROM {t} WHERE {n} >= {v}"),
    ("{cw} of {tw} with {nw} at most {v}", "SELECT {c} FROM {t} WHERE {n} <= {v}"),
    ("{cw} of {tw} whose {gw} is '{s}'", "SELECT {c} FROM {t} WHERE {g} = '{s}'"),
    ("{cw} of {tw} whose {gw} is not '{s}'", "SELECT {c} FROM {t} WHERE {g} != '{s}'"),
    ("{cw} of {tw} whose {gw} contains '{s}'", "SELECT {c} FROM {t} WHERE {g} LIKE '%{s}%'"),
    ("{cw} of {tw} whose {gw} does not contain '{s}'", "SELECT {c} FROM {t} WHERE {g} NOT LIKE '%{s}%'"),
    ("{cw} of {tw} with {nw} between {v} and {v2}", "SELECT {c} FROM {t} WHERE {n} BETWEEN {v} AND {v2}"),
    (
        "{cw} of {tw} with {nw} above {v} in '{s}'",
        "SELECT {c} FROM {t} WHERE {n} > {v} AND {g} = '{s}'",
    ),
    ("{cw} of {tw} in '{s}' or '{s2}'", "SELECT {c} FROM {t} WHERE {g} = '{s}' OR {g} = '{s2}'"),
    ("{cw} of {tw} not in '{s}'", "SELECT {c} FROM {t} WHERE NOT ({g} = '{s}')"),
    (
        "{cw} of {tw} with {nw} above the average",
        "SELECT {c} FROM {t} WHERE {n} > (SELECT avg({n}) FROM {t})",
    ),
    ("{plw} of {ptw} where {paw} exceeds {pbw}", "SELECT {pl} FROM {pt} WHERE {pa} > {pb}"),
    ("{cw} of {tw} sorted by {nw} ascending", "SELECT {c} FROM {t} ORDER BY {n} ASC"),
    ("{cw} of {tw} sorted by {nw} descending", "SELECT {c} FROM {t} ORDER BY {n} DESC"),
    ("{cw} of the {tw} with the highest {nw}", "SELECT {c} FROM {t} ORDER BY {n} DESC LIMIT 1"),
    ("{cw} of the top {v} {tw} by {nw}", "SELECT {c} FROM {t} ORDER BY {n} DESC LIMIT {v}"),
    (
        "{cw} of {tw} by {nw} descending then {cw} ascending",
        "SELECT {c} FROM {t} ORDER BY {n} DESC, {c} ASC",
    ),
    ("number of {tw} for each {gw}", "SELECT {g}, count(*) FROM {t} GROUP BY {g}"),
    (
        "{gw} with more than {v} {tw}",
        "SELECT {g} FROM {t} GROUP BY {g} HAVING count(*) > {v}",
    ),
    (
        "number of {tw} for each {gw} and {cw}",
        "SELECT {g}, {c}, count(*) FROM {t} GROUP BY {g}, {c}",
    ),
    (
        "{cw} of {tw} with a {uw} whose {unw} is above {v}",
        "SELECT T1.{c} FROM {t} AS T1 JOIN {u} AS T2 ON T1.{k} = T2.{fk} WHERE T2.{un} > {v}",
    ),
    (
        "{cw} of the {tw} with the most {uw}",
        "SELECT T1.{c} FROM {t} AS T1 JOIN {u} AS T2 ON T1.{k} = T2.{fk} GROUP BY T1.{k} ORDER BY count(*) DESC LIMIT 1",
    ),
    (
        "{cw} of {tw} matched to {uw} by {kw} and by {nw} equal to {unw}",
        "SELECT T1.{c} FROM {t} AS T1 JOIN {u} AS T2 ON T1.{k} = T2.{fk} AND T1.{n} = T2.{un}",
    ),
    ("{cw} of {tw} that have some {uw}", "SELECT {c} FROM {t} WHERE {k} IN (SELECT {fk} FROM {u})"),
    ("{cw} of {tw} that have no {uw}", "SELECT {c} FROM {t} WHERE {k} NOT IN (SELECT {fk} FROM {u})"),
    (
        "{gw} having {tw} with {nw} above {v} and {tw} with {nw} below {v2}",
        "SELECT {g} FROM {t} WHERE {n} > {v} INTERSECT SELECT {g} FROM {t} WHERE {n} < {v2}",
    ),
    (
        "{cw} of {tw} in '{s}' together with those with {nw} below {v}",
        "SELECT {c} FROM {t} WHERE {g} = '{s}' UNION SELECT {c} FROM {t} WHERE {n} < {v}",
    ),
    ("{kw} of {tw} without any {uw}", "SELECT {k} FROM {t} EXCEPT SELECT {fk} FROM {u}"),
    (
        "how many {gw} have more than {v} {tw}",
        "SELECT count(*) FROM (SELECT {g} FROM {t} GROUP BY {g} HAVING count(*) > {v})",
    ),
    ("{plw} and {paw} minus {pbw} of {ptw}", "SELECT {pl}, {pa} - {pb} FROM {pt}"),
    ("{plw} and {paw} plus {pbw} of {ptw}", "SELECT {pl}, {pa} + {pb} FROM {pt}"),
    ("total of {paw} times {pbw} over {ptw}", "SELECT sum({pa} * {pb}) FROM {pt}"),
    ("average ratio of {paw} to {pbw} over {ptw}", "SELECT avg({pa} / {pb}) FROM {pt}"),
];

pub fn template_count() -> usize {
    TEMPLATES.len()
}

fn words(ident: &str) -> String {
    ident.replace('_', " ")
}

fn instantiate(template: &str, p: &Profile, v: (i64, i64), s: (&str, &str)) -> String {
    let mut out = template.to_string();
    let idents = [
        ("t", p.t),
        ("c", p.c),
        ("n", p.n),
        ("g", p.g),
        ("k", p.k),
        ("u", p.u),
        ("fk", p.fk),
        ("un", p.un),
        ("pt", p.pt),
        ("pa", p.pa),
        ("pb", p.pb),
        ("pl", p.pl),
    ];
    for (key, ident) in idents {
        out = out.replace(&format!("{{{key}w}}"), &words(ident));
        out = out.replace(&format!("{{{key}}}"), ident);
    }
    out.replace("{v2}", &v.1.to_string())
        .replace("{v}", &v.0.to_string())
        .replace("{s2}", s.1)
        .replace("{s}", s.0)
}

/// `count` examples. The first `templates x schemas` cycle through every
/// template on every schema, so any `count >= template_count()` covers all
/// templates; the rest draw random templates and values.
pub fn generate(count: usize, seed: u64) -> Vec<TrainExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<(usize, usize)> = Vec::new();
    for round in 0..PROFILES.len() {
        for t in 0..TEMPLATES.len() {
            order.push((t, (t + round) % PROFILES.len()));
        }
    }
    let mut out = Vec::with_capacity(count);
    let mut seen = std::collections::BTreeSet::new();
    let mut i = 0;
    while out.len() < count {
        let (t, p) = match order.get(i) {
            Some(&tp) => tp,
            None => (rng.gen_range(0..TEMPLATES.len()), rng.gen_range(0..PROFILES.len())),
        };
        i += 1;
        let profile = &PROFILES[p];
        let mut nums = profile.numbers.to_vec();
        nums.shuffle(&mut rng);
        let v = (nums[0].min(nums[1]), nums[0].max(nums[1]));
        let mut strs = profile.strings.to_vec();
        strs.shuffle(&mut rng);
        let (q, sql) = TEMPLATES[t];
        let question = instantiate(q, profile, v, (strs[0], strs[1]));
        let query = instantiate(sql, profile, v, (strs[0], strs[1]));
        if seen.insert((profile.db, question.clone())) {
            out.push(TrainExample::new(profile.db, &question, &query));
        }
        if i > order.len() + 100 * count {
            break;
        }
    }
    out
}
