//! Line-oriented terminal loop over one sample's knowledge sources.

use std::io::{BufRead, Write};

use super::commands::Run;
use crate::plan::{serialize_plan, Plan};
use crate::planner::{plan, PlanningInput};
use crate::reader::{assemble_input, generate_response};
use crate::refine::{PoolRetriever, Refiner};
use crate::registry::{DialogueContext, Turn};
use crate::retrieval::{retrieve_chain, ScoredEvidence, Scoring};

const HELP: &str = "\
commands:
  <text>          next user utterance
  r | :refine     refine the last response
  :sample <id>    switch to the sources of another sample (clears history)
  :sources        list knowledge sources
  :reset          clear the dialogue history
  :help           this text
  :quit           leave";

struct LastTurn {
    context: DialogueContext,
    plan: Plan,
    evidence: Vec<ScoredEvidence>,
    response: String,
}

struct Session<'a> {
    run: &'a Run,
    sample: usize,
    history: Vec<Turn>,
    last: Option<LastTurn>,
}

impl Session<'_> {
    fn scoring(&self) -> Scoring<'_> {
        Scoring { providers: &self.run.providers, templates: &self.run.templates, gold: None }
    }

    fn turn(&mut self, text: &str, out: &mut impl Write) -> std::io::Result<()> {
        let sample = &self.run.samples[self.sample];
        let mut turns = self.history.clone();
        turns.push(Turn::user(text));
        let context = DialogueContext::new(turns).expect("ends with a user turn");
        let input = PlanningInput { context: &context, registry: &sample.registry, gold: None };
        let outcome = match plan(input, &self.run.planner_config(), &self.run.providers, &self.run.templates) {
            Ok(o) => o,
            Err(e) => return writeln!(out, "error: planning: {e}"),
        };
        writeln!(out, "plan: {}", serialize_plan(&outcome.plan))?;
        if let Some(w) = &outcome.warning {
            writeln!(out, "  (fallback: {w})")?;
        }
        let chain =
            match retrieve_chain(&context, &outcome.plan, &sample.registry, &self.run.config.retrieval, &self.scoring()) {
                Ok(c) => c,
                Err(e) => return writeln!(out, "error: retrieval: {e}"),
            };
        let evidence = chain.flatten();
        print_evidence(&evidence, out)?;
        let response = match self.generate(&context, &outcome.plan, &evidence) {
            Ok(r) => r,
            Err(e) => return writeln!(out, "error: generation: {e}"),
        };
        writeln!(out, "system: {response}")?;
        self.history = context.turns().to_vec();
        self.history.push(Turn::system(response.clone()));
        self.last = Some(LastTurn { context, plan: outcome.plan, evidence, response });
        Ok(())
    }

    fn generate(&self, context: &DialogueContext, plan: &Plan, evidence: &[ScoredEvidence]) -> Result<String, String> {
        let prompt = assemble_input(context, plan, evidence, &self.run.templates).map_err(|e| e.to_string())?;
        let chat = self.run.providers.chat().map_err(|e| e.to_string())?;
        generate_response(&prompt, chat, &self.run.templates, self.run.config.generation).map_err(|e| e.to_string())
    }

    fn refine(&mut self, out: &mut impl Write) -> std::io::Result<()> {
        let Some(last) = &self.last else {
            return writeln!(out, "nothing to refine yet");
        };
        let sample = &self.run.samples[self.sample];
        let retriever = PoolRetriever { registry: &sample.registry, config: &self.run.config.retrieval, scoring: self.scoring() };
        let refiner = Refiner {
            providers: &self.run.providers,
            retriever: &retriever,
            templates: &self.run.templates,
            params: self.run.config.generation,
            config: self.run.config.refine,
        };
        let refined = match refiner.refine_multi(&last.context, &last.plan, &last.evidence, &last.response) {
            Ok(r) => r,
            Err(e) => return writeln!(out, "error: refinement: {e}"),
        };
        for t in &refined.traces {
            writeln!(out, "pass {}: S = {:?}, evicted {:?}, injected {:?}", t.pass, t.s, t.evicted, t.injected)?;
        }
        if refined.traces.is_empty() {
            writeln!(out, "unchanged (NULL plan or no evidence)")?;
            return Ok(());
        }
        print_evidence(&refined.evidences, out)?;
        writeln!(out, "system: {}", refined.response)?;
        if let Some(Turn { text, .. }) = self.history.last_mut() {
            text.clone_from(&refined.response);
        }
        self.last = Some(LastTurn {
            context: last.context.clone(),
            plan: last.plan.clone(),
            evidence: refined.evidences,
            response: refined.response,
        });
        Ok(())
    }
}

fn print_evidence(evidence: &[ScoredEvidence], out: &mut impl Write) -> std::io::Result<()> {
    for e in evidence {
        writeln!(out, "  {} {} [{}] {}", e.evidence.source, e.evidence.id, e.score, e.evidence.text)?;
    }
    Ok(())
}

/// Reads commands from `input` until EOF or `:quit`.
pub fn repl<R: BufRead, W: Write>(run: &Run, input: R, mut out: W) -> std::io::Result<()> {
    if run.samples.is_empty() {
        return writeln!(out, "corpus is empty");
    }
    let mut s = Session { run, sample: 0, history: Vec::new(), last: None };
    writeln!(out, "sources of sample {} (:help for commands)", run.samples[0].id)?;
    for line in input.lines() {
        let line = line?;
        let line = line.trim();
        match line.split_once(' ').map_or((line, ""), |(a, b)| (a, b.trim())) {
            ("", _) => continue,
            (":quit" | ":q", _) => break,
            (":help", _) => writeln!(out, "{HELP}")?,
            (":reset", _) => {
                s.history.clear();
                s.last = None;
                writeln!(out, "history cleared")?;
            }
            (":sources", _) => {
                for (id, entry) in run.samples[s.sample].registry.entries() {
                    writeln!(out, "  {id} ({} docs)", entry.docs.len())?;
                }
            }
            (":sample", id) => match run.samples.iter().position(|x| x.id == id) {
                Some(i) => {
                    s = Session { run, sample: i, history: Vec::new(), last: None };
                    writeln!(out, "switched to sample {id}")?;
                }
                None => writeln!(out, "no sample {id:?}")?,
            },
            ("r" | ":refine", "") => s.refine(&mut out)?,
            _ => s.turn(line, &mut out)?,
        }
        out.flush()?;
    }
    Ok(())
}
