//! Loads the bundled toy dataset and prints the graph summary plus the
//! event memberships that feed the entity/event attention.

use eventke::fixtures::toy_dataset;

fn main() -> eventke::Result<()> {
    let ds = toy_dataset(0)?;
    let g = &ds.graph;
    let c = ds.counts();
    println!("{:>10} {:>10} {:>10} {:>10}", "Entities", "Rels", "Events", "Args");
    println!(
        "{:>10} {:>10} {:>10} {:>10}",
        c.entities, c.relation_edges, c.events, c.argument_links
    );
    println!(
        "{} relation types (+ inverses and self loop = {}), {} temporal links",
        c.relation_types,
        g.relation_count(),
        c.temporal_links
    );
    println!("split: {} train / {} valid / {} test", ds.train.len(), ds.valid.len(), ds.test.len());

    let v = g.vocabs();
    for i in 0..g.entity_count() {
        let id = eventke::data::EntityId(i);
        let events: Vec<&str> = g
            .events_of_entity(id)
            .into_iter()
            .map(|e| v.events.name(e.0))
            .collect();
        println!(
            "{:<8} degree {:>2}  events [{}]",
            v.entities.name(i),
            g.entity_neighbors(id).len(),
            events.join(", ")
        );
    }
    Ok(())
}
