//! Properties of generated queries: parsing, planning, rewriting and
//! emission, checked against a hand-written evaluator.

use deltasql::emit::{compile_view, lower_query, render_query, CompileOptions, Dialect, Emptiness, ScriptBundle};
use deltasql::ops::combine_view;
use deltasql::plan::{classify, eval_plan, plan_select, ScanSource};
use deltasql::sql::{parse_query, parse_statements};
use deltasql::zset::{integrate, normalize};
use deltasql::{Column, DataType, Error, Multiplicity, Schema, Tuple, Value, ZSet};
use proptest::prelude::*;

fn tables() -> Vec<Schema> {
    vec![
        Schema::new(
            "t",
            vec![
                Column::new("g", DataType::Text),
                Column::new("h", DataType::Text),
                Column::new("v", DataType::Int),
                Column::new("w", DataType::Int),
            ],
        )
        .unwrap(),
        Schema::new("u", vec![Column::new("g", DataType::Text), Column::new("x", DataType::Int)]).unwrap(),
    ]
}

#[derive(Debug, Clone, Copy)]
enum Cmp {
    Eq,
    Ne,
    Lt,
    Ge,
}

impl Cmp {
    fn sql(self) -> &'static str {
        match self {
            Cmp::Eq => "=",
            Cmp::Ne => "<>",
            Cmp::Lt => "<",
            Cmp::Ge => ">=",
        }
    }

    fn holds(self, a: i64, b: i64) -> bool {
        match self {
            Cmp::Eq => a == b,
            Cmp::Ne => a != b,
            Cmp::Lt => a < b,
            Cmp::Ge => a >= b,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Agg {
    SumV,
    CountStar,
    CountW,
}

/// Filter `col cmp literal` on an INT column of `t` (v = 2, w = 3).
type Cond = (usize, Cmp, i64);

#[derive(Debug, Clone)]
enum Spec {
    /// Projected `t` columns, with an optional `v + w` column.
    Project { cols: Vec<usize>, sum: bool, cond: Option<Cond> },
    Group { keys: Vec<usize>, aggs: Vec<Agg>, cond: Option<Cond> },
    Join { cond: Option<Cond>, aggregate: bool },
}

const T_COLS: [&str; 4] = ["g", "h", "v", "w"];

fn where_sql(cond: &Option<Cond>, prefix: &str) -> String {
    match cond {
        Some((c, op, k)) => format!(" WHERE {prefix}{} {} {k}", T_COLS[*c], op.sql()),
        None => String::new(),
    }
}

impl Spec {
    fn sql(&self) -> String {
        match self {
            Spec::Project { cols, sum, cond } => {
                let mut items: Vec<String> = cols.iter().map(|&c| T_COLS[c].to_string()).collect();
                if *sum {
                    items.push("v + w AS vw".into());
                }
                format!("SELECT {} FROM t{}", items.join(", "), where_sql(cond, ""))
            }
            Spec::Group { keys, aggs, cond } => {
                let keys: Vec<&str> = keys.iter().map(|&c| T_COLS[c]).collect();
                let mut items: Vec<String> = keys.iter().map(|k| k.to_string()).collect();
                for (i, a) in aggs.iter().enumerate() {
                    items.push(match a {
                        Agg::SumV => format!("SUM(v) AS a{i}"),
                        Agg::CountStar => format!("COUNT(*) AS a{i}"),
                        Agg::CountW => format!("COUNT(w) AS a{i}"),
                    });
                }
                format!(
                    "SELECT {} FROM t{} GROUP BY {}",
                    items.join(", "),
                    where_sql(cond, ""),
                    keys.join(", ")
                )
            }
            Spec::Join { cond, aggregate: false } => {
                format!("SELECT t.g, t.v, u.x FROM t JOIN u ON t.g = u.g{}", where_sql(cond, "t."))
            }
            Spec::Join { cond, aggregate: true } => format!(
                "SELECT u.g, SUM(u.x) AS total, COUNT(*) AS n FROM t JOIN u ON t.g = u.g{} GROUP BY u.g",
                where_sql(cond, "t.")
            ),
        }
    }

    /// Independent row-by-row evaluation over plain table states.
    fn eval(&self, t: &[Tuple], u: &[Tuple]) -> Vec<Tuple> {
        let keep = |cond: &Option<Cond>, row: &Tuple| match cond {
            None => true,
            Some((c, op, k)) => match row[*c] {
                Value::Int(x) => op.holds(x, *k),
                _ => false,
            },
        };
        let mut out: Vec<Tuple> = Vec::new();
        match self {
            Spec::Project { cols, sum, cond } => {
                for row in t.iter().filter(|r| keep(cond, r)) {
                    let mut o: Tuple = cols.iter().map(|&c| row[c].clone()).collect();
                    if *sum {
                        o.push(match (&row[2], &row[3]) {
                            (Value::Int(a), Value::Int(b)) => Value::Int(a + b),
                            _ => Value::Null,
                        });
                    }
                    out.push(o);
                }
            }
            Spec::Group { keys, aggs, cond } => {
                let mut groups: Vec<(Tuple, Vec<&Tuple>)> = Vec::new();
                for row in t.iter().filter(|r| keep(cond, r)) {
                    let key: Tuple = keys.iter().map(|&c| row[c].clone()).collect();
                    match groups.iter_mut().find(|(k, _)| *k == key) {
                        Some((_, rows)) => rows.push(row),
                        None => groups.push((key, vec![row])),
                    }
                }
                for (mut key, rows) in groups {
                    for a in aggs {
                        key.push(match a {
                            Agg::CountStar => Value::Int(rows.len() as i64),
                            Agg::CountW => Value::Int(rows.iter().filter(|r| !r[3].is_null()).count() as i64),
                            Agg::SumV => {
                                let vals: Vec<i64> = rows
                                    .iter()
                                    .filter_map(|r| if let Value::Int(x) = r[2] { Some(x) } else { None })
                                    .collect();
                                if vals.is_empty() {
                                    Value::Null
                                } else {
                                    Value::Int(vals.iter().sum())
                                }
                            }
                        });
                    }
                    out.push(key);
                }
            }
            Spec::Join { cond, aggregate } => {
                let mut pairs = Vec::new();
                for l in t.iter().filter(|r| keep(cond, r)) {
                    for r in u {
                        if !l[0].is_null() && l[0] == r[0] {
                            pairs.push((l, r));
                        }
                    }
                }
                if !aggregate {
                    out = pairs.iter().map(|(l, r)| vec![l[0].clone(), l[2].clone(), r[1].clone()]).collect();
                } else {
                    let mut groups: Vec<(Value, Vec<&Tuple>)> = Vec::new();
                    for (_, r) in pairs {
                        match groups.iter_mut().find(|(k, _)| *k == r[0]) {
                            Some((_, rows)) => rows.push(r),
                            None => groups.push((r[0].clone(), vec![r])),
                        }
                    }
                    for (k, rows) in groups {
                        let xs: Vec<i64> = rows
                            .iter()
                            .filter_map(|r| if let Value::Int(x) = r[1] { Some(x) } else { None })
                            .collect();
                        let total = if xs.is_empty() { Value::Null } else { Value::Int(xs.iter().sum()) };
                        out.push(vec![k, total, Value::Int(rows.len() as i64)]);
                    }
                }
            }
        }
        out.sort();
        out
    }
}

fn cond() -> impl Strategy<Value = Option<Cond>> {
    prop::option::of((
        2usize..4,
        prop::sample::select(vec![Cmp::Eq, Cmp::Ne, Cmp::Lt, Cmp::Ge]),
        -1i64..4,
    ))
}

fn spec() -> impl Strategy<Value = Spec> {
    let agg = prop::sample::select(vec![Agg::SumV, Agg::CountStar, Agg::CountW]);
    prop_oneof![
        (prop::sample::subsequence(vec![0usize, 1, 2, 3], 1..=4), any::<bool>(), cond())
            .prop_map(|(cols, sum, cond)| Spec::Project { cols, sum, cond }),
        (prop::sample::subsequence(vec![0usize, 1], 1..=2), prop::collection::vec(agg, 1..=3), cond())
            .prop_map(|(keys, aggs, cond)| Spec::Group { keys, aggs, cond }),
        (cond(), any::<bool>()).prop_map(|(cond, aggregate)| Spec::Join { cond, aggregate }),
    ]
}

fn text() -> impl Strategy<Value = Value> {
    prop_oneof![
        1 => Just(Value::Null),
        6 => prop::sample::select(vec!["a", "b", "c"]).prop_map(Value::text),
    ]
}

fn int(nullable: bool) -> BoxedStrategy<Value> {
    if nullable {
        prop_oneof![1 => Just(Value::Null), 6 => (-2i64..5).prop_map(Value::Int)].boxed()
    } else {
        (1i64..5).prop_map(Value::Int).boxed()
    }
}

fn t_rows(nullable: bool, max: usize) -> impl Strategy<Value = Vec<Tuple>> {
    prop::collection::vec(
        (text(), text(), int(nullable), int(nullable)).prop_map(|(g, h, v, w)| vec![g, h, v, w]),
        0..=max,
    )
}

fn u_rows(nullable: bool, max: usize) -> impl Strategy<Value = Vec<Tuple>> {
    prop::collection::vec((text(), int(nullable)).prop_map(|(g, x)| vec![g, x]), 0..=max)
}

fn sorted_tuples(z: &ZSet) -> Vec<Tuple> {
    assert!(z.is_table_state(), "expected a table state: {z}");
    let mut v: Vec<Tuple> = z.tuples().cloned().collect();
    v.sort();
    v
}

fn plan_text(sql: &str) -> String {
    plan_select(&parse_query(sql).unwrap(), &tables()).unwrap().to_text().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rendered_queries_parse_back(s in spec()) {
        let q = parse_query(&s.sql()).unwrap();
        for d in Dialect::ALL {
            prop_assert_eq!(&parse_query(&render_query(&q, d)).unwrap(), &q);
        }
    }

    #[test]
    fn lowered_plans_replan_identically(s in spec()) {
        let plan = plan_select(&parse_query(&s.sql()).unwrap(), &tables()).unwrap();
        let lowered = render_query(&lower_query(&plan).unwrap(), Dialect::Generic);
        prop_assert_eq!(plan_text(&lowered), plan.to_text().unwrap());
    }

    #[test]
    fn planning_is_deterministic(s in spec()) {
        prop_assert_eq!(plan_text(&s.sql()), plan_text(&s.sql()));
    }

    #[test]
    fn plans_agree_with_row_evaluator(s in spec(), t in t_rows(true, 12), u in u_rows(true, 8)) {
        let ts = tables();
        let plan = plan_select(&parse_query(&s.sql()).unwrap(), &ts).unwrap();
        let tz = ZSet::from_table(ts[0].clone(), t.clone()).unwrap();
        let uz = ZSet::from_table(ts[1].clone(), u.clone()).unwrap();
        let out = eval_plan(&plan, &|name, _| Ok(if name == "t" { tz.clone() } else { uz.clone() })).unwrap();
        prop_assert_eq!(sorted_tuples(&out), s.eval(&t, &u));
    }

    #[test]
    fn rewrite_keeps_class_and_multiplicity(s in spec()) {
        let def = compile_view("v", &parse_query(&s.sql()).unwrap(), "", &tables(), &CompileOptions::default()).unwrap();
        prop_assert_eq!(def.incremental.class, classify(&def.plan).unwrap());
        prop_assert_eq!(def.incremental.plan.mult_col(), Some(def.options.mult_col.as_str()));
    }

    #[test]
    fn incremental_plans_are_sound(
        s in spec(),
        emptiness in prop::sample::select(vec![Emptiness::Zero, Emptiness::Sound]),
        t in t_rows(false, 20),
        u in u_rows(false, 10),
        t_ins in t_rows(false, 5),
        u_ins in u_rows(false, 5),
        t_del in prop::collection::vec(any::<prop::sample::Index>(), 0..4),
        u_del in prop::collection::vec(any::<prop::sample::Index>(), 0..4),
    ) {
        let ts = tables();
        let opts = CompileOptions { emptiness, ..CompileOptions::default() };
        let def = compile_view("v", &parse_query(&s.sql()).unwrap(), "", &ts, &opts).unwrap();
        let delta = |schema: &Schema, rows: &[Tuple], ins: &[Tuple], del: &[prop::sample::Index]| {
            let mut picked: Vec<usize> = if rows.is_empty() { vec![] } else { del.iter().map(|i| i.index(rows.len())).collect() };
            picked.sort();
            picked.dedup();
            let mut d: Vec<(Tuple, Multiplicity)> = picked.iter().map(|&i| (rows[i].clone(), Multiplicity(false))).collect();
            d.extend(ins.iter().map(|r| (r.clone(), Multiplicity(true))));
            ZSet::from_rows(schema.clone(), d).unwrap()
        };
        let tz = ZSet::from_table(ts[0].clone(), t.clone()).unwrap();
        let uz = ZSet::from_table(ts[1].clone(), u.clone()).unwrap();
        let dt = delta(&ts[0], &t, &t_ins, &t_del);
        let du = delta(&ts[1], &u, &u_ins, &u_del);
        let base = |name: &str| if name == "t" { tz.clone() } else { uz.clone() };
        let v = eval_plan(&def.plan, &|name, _| Ok(base(name))).unwrap();
        let dv = eval_plan(&def.incremental.plan, &|name, src| Ok(match src {
            ScanSource::Base => base(name),
            ScanSource::Delta { .. } => if name == "t" { dt.clone() } else { du.clone() },
        })).unwrap();
        let merged = combine_view(&v, &dv, &def.incremental.combine).unwrap();
        let t2 = integrate(&tz, &dt).unwrap();
        let u2 = integrate(&uz, &du).unwrap();
        let expected = eval_plan(&def.plan, &|name, _| Ok(if name == "t" { t2.clone() } else { u2.clone() })).unwrap();
        prop_assert_eq!(normalize(&merged), normalize(&expected));
    }

    #[test]
    fn scripts_are_deterministic(s in spec(), d in prop::sample::select(Dialect::ALL.to_vec())) {
        let opts = CompileOptions { dialect: d, ..CompileOptions::default() };
        let build = || {
            let def = compile_view("v", &parse_query(&s.sql()).unwrap(), "", &tables(), &opts).unwrap();
            let b = ScriptBundle::new(def).unwrap();
            (b.ddl_sql(), b.propagate_sql())
        };
        let first = build();
        prop_assert_eq!(&first, &build());
        // Every emitted statement parses.
        parse_statements(&first.0).unwrap();
        parse_statements(&first.1).unwrap();
    }

    #[test]
    fn parse_errors_point_into_the_source(s in spec(), cut in any::<prop::sample::Index>(), junk in "[a-z(),;*=<> ']{0,4}") {
        let full = s.sql();
        let at = cut.index(full.len() + 1);
        let text = format!("{}{junk}", &full[..at]);
        if let Err(e @ (Error::Syntax { .. } | Error::Unsupported { .. })) = parse_query(&text) {
            let pos = e.pos().unwrap();
            let lines: Vec<&str> = text.split('\n').collect();
            prop_assert!(pos.line >= 1 && pos.line <= lines.len());
            prop_assert!(pos.column >= 1 && pos.column <= lines[pos.line - 1].chars().count() + 1, "{e} in {text:?}");
        }
    }
}
