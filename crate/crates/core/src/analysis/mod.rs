//! Calibration, agreement and diversity analytics over predictions.

mod agreement;
mod calibration;
mod diversity;
mod records;

pub use agreement::{
    check_aligned, chernoff_p, ensemble_variance, overlap_report, rank_by_uncertainty, top20_overlap,
    uncertainty_rank, uncertainty_scores, Overlap, OverlapReport, UncertaintyMethod, TOP_FRACTION,
};
pub use calibration::{bin_sizes, ece, Bin, ReliabilityBins, N_BINS};
pub use diversity::{diversity_corr, diversity_matrix, encoder_diversity, mean_offdiag_corr};
pub use records::{ensemble_average, nearest_neighbors, parse_records, read_records, render_records, write_records};
