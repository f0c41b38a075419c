//! Residual multi-modal GCN, fused readout and the reconstruction
//! objective it is trained on.

mod checkpoint;
mod gcn;
mod model;
mod objective;
mod readout;

pub use checkpoint::{
    decode_checkpoint, decode_heads, encode_checkpoint, encode_heads, read_checkpoint, read_heads, write_checkpoint,
    write_heads,
};
pub use gcn::{beta, dropout_masks, gcn_backward, gcn_forward, GcnForward, GcnHyper, LayerCache, Mode};
pub use model::{
    fuse_rows, train, train_from, EmbeddingTable, ModelForward, ModelGrads, ModelState, TrainLog,
    TrainOptions, TrainOutput,
};
pub use objective::{objective, objective_grad, ModalRows, ObjectiveGrad, ObjectiveValue};
pub use readout::{Dense, DenseGrad, Readout, ReadoutCache};
