use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use deltasql::engine::{Engine, ExecOptions};
use deltasql::schema::{Column, Schema};
use deltasql::{DataType, Value};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const QUERIES: [(&str, &str); 2] = [
    ("group_sum", "SELECT k, SUM(v) AS s, COUNT(*) AS n FROM t GROUP BY k"),
    ("filter_project", "SELECT k, v * 2 + 1 AS w FROM t WHERE v > 50 OR k = 'k7'"),
];

fn engine(rows: usize, options: ExecOptions) -> Engine {
    let mut e = Engine::with_options(options);
    let schema = Schema::new(
        "t",
        vec![Column::new("k", DataType::Text), Column::new("v", DataType::Int)],
    )
    .unwrap();
    e.create_table(schema, false).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let data: Vec<_> = (0..rows)
        .map(|_| {
            let k = Value::text(format!("k{}", rng.gen_range(0..1000)));
            (vec![k, Value::Int(rng.gen_range(0..100))], 1)
        })
        .collect();
    e.insert_rows("t", &data).unwrap();
    e
}

fn modes(c: &mut Criterion) {
    for rows in [50_000usize, 400_000] {
        let seq = engine(rows, ExecOptions::sequential());
        let par = engine(rows, ExecOptions::default());
        for (name, sql) in QUERIES {
            let mut g = c.benchmark_group(name);
            g.sample_size(10);
            g.bench_with_input(BenchmarkId::new("sequential", rows), &sql, |b, q| {
                b.iter(|| seq.query_sql(q).unwrap())
            });
            g.bench_with_input(BenchmarkId::new("parallel", rows), &sql, |b, q| {
                b.iter(|| par.query_sql(q).unwrap())
            });
            g.finish();
        }
    }
}

criterion_group!(benches, modes);
criterion_main!(benches);
