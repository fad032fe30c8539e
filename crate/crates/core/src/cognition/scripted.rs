use super::{CognitionContext, CognitionEngine, CognitionOutput, EngineError};

/// Replays a fixed list of proposals and then keeps repeating the last one.
/// Used for fault injection: a misbehaving reasoner is easiest to model as a
/// script.
#[derive(Debug, Clone)]
pub struct ScriptedEngine {
    script: Vec<CognitionOutput>,
    next: usize,
}

impl ScriptedEngine {
    pub fn new(script: Vec<CognitionOutput>) -> Self {
        assert!(!script.is_empty(), "a script needs at least one proposal");
        Self { script, next: 0 }
    }

    pub fn repeating(output: CognitionOutput) -> Self {
        Self::new(vec![output])
    }
}

impl CognitionEngine for ScriptedEngine {
    fn name(&self) -> &str {
        "scripted"
    }

    fn next_proposal(&mut self, _ctx: &CognitionContext<'_>) -> Result<CognitionOutput, EngineError> {
        let i = self.next.min(self.script.len() - 1);
        self.next += 1;
        Ok(self.script[i].clone())
    }
}
