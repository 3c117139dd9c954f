//! Full-ranking recall@N / ndcg@N on a hand-built model whose scores
//! put each user's held-out item first.

use dgcf::evaluator::{evaluate, ndcg_at_n, rank_items, recall_at_n};
use dgcf::{ChunkedEmbeddingTable, InteractionDataset};

fn main() -> dgcf::Result<()> {
    let ds = InteractionDataset::parse("0 0 1\n1 2\n2 3 4\n", "0 2\n1 0\n2 1\n")?;
    // one-hot items; each user points at their test item
    let (users, items) = (ds.num_users, ds.num_items);
    let mut table = ChunkedEmbeddingTable::zeros(users, items, items, 1)?;
    for i in 0..items {
        table.row_mut(users + i)[i] = 1.0;
    }
    for (u, test) in ds.test.iter().enumerate() {
        table.row_mut(u)[test[0]] = 1.0;
    }
    for u in 0..users {
        let ranking = rank_items(u, &table, &ds);
        println!(
            "user {u}: ranking {ranking:?}  recall@1 {}  ndcg@2 {:.3}",
            recall_at_n(&ranking, &ds.test[u], 1),
            ndcg_at_n(&ranking, &ds.test[u], 2)
        );
    }
    println!("{}", dgcf::RankingMetrics::CSV_HEADER);
    for n in [1, 2, 3] {
        println!("{}", evaluate(&ds, &table, n).to_csv());
    }
    Ok(())
}
