//! Prints the protocol table, draws interventions from both spaces and
//! applies one to the default variables.

use causalcf::env::TaskKind;
use causalcf::scm::{apply_intervention, protocol_spec, CausalVariables, ProtocolId, Space, VariableSpace};

fn main() -> causalcf::Result<()> {
    for id in ProtocolId::all() {
        let p = protocol_spec(id);
        let vars: Vec<_> = p.variables.iter().map(|v| v.short_name()).collect();
        println!("{id:>3}  space {}  {{{}}}", p.space, vars.join(", "));
    }

    let table = VariableSpace::for_task(TaskKind::Picking);
    let p8 = protocol_spec(ProtocolId::new(8)?);
    for seed in 0..3 {
        let i = table.sample(p8.space, &p8.variables, seed);
        println!("P8 draw {seed}: {}", serde_json::to_string(&i)?);
        assert!(table.intervention_in_space(&i, Space::B));
    }

    let i = table.sample_named(Space::A, &["bm", "gp"], 7)?;
    let vars = apply_intervention(&CausalVariables::defaults(TaskKind::Picking), &i)?;
    println!("after do({}): {vars:?}", serde_json::to_string(&i)?);
    Ok(())
}
