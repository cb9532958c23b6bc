//! Structural summaries used to diff the ablation variants.

use std::fmt;

/// One encoder layer, reduced to its wiring facts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerDesc {
    pub role: &'static str,
    pub d_in: usize,
    pub d_out: usize,
    pub div_in: usize,
    pub div_out: usize,
    pub has_entry_transform: bool,
    pub skip_source: Option<usize>,
}

/// Whole-model summary: encoder wiring plus the flat parameter inventory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelStructure {
    pub variant: &'static str,
    pub encoder_layers: Vec<LayerDesc>,
    pub params: Vec<(String, Vec<usize>)>,
    pub total_scalars: usize,
}

impl ModelStructure {
    pub fn param_names(&self) -> Vec<&str> {
        self.params.iter().map(|(n, _)| n.as_str()).collect()
    }

    /// Parameter names present here but not in `other`.
    pub fn params_missing_from<'a>(&'a self, other: &ModelStructure) -> Vec<&'a str> {
        let other_names: std::collections::HashSet<&str> =
            other.params.iter().map(|(n, _)| n.as_str()).collect();
        self.params
            .iter()
            .map(|(n, _)| n.as_str())
            .filter(|n| !other_names.contains(n))
            .collect()
    }

    /// True when both models hold exactly the same named shapes.
    pub fn same_parameters(&self, other: &ModelStructure) -> bool {
        self.params == other.params
    }
}

impl fmt::Display for ModelStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "variant: {}", self.variant)?;
        for (i, l) in self.encoder_layers.iter().enumerate() {
            writeln!(
                f,
                "  layer {}: {} {}->{} (1/{} -> 1/{}){}{}",
                i + 1,
                l.role,
                l.d_in,
                l.d_out,
                l.div_in,
                l.div_out,
                if l.has_entry_transform { " +conv" } else { "" },
                match l.skip_source {
                    Some(s) => format!(" skip<-level{s}"),
                    None => String::new(),
                },
            )?;
        }
        writeln!(
            f,
            "  params: {} tensors, {} scalars",
            self.params.len(),
            self.total_scalars
        )
    }
}
