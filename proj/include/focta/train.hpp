#pragma once

#include "focta/data.hpp"
#include "focta/model.hpp"

namespace focta {

struct PretrainParams {
    int epochs = 20;            // upper bound
    double lr = 1e-3;           // adam
    int batch = 32;
    double val_fraction = 1.0 / 6.0;
    double target_accuracy = 98.5;  // stop once the held-out split reaches this
};

struct PretrainResult {
    double clean_accuracy_pct = 0.0;  // held-out split, running-stats BN
    int epochs_run = 0;
    std::vector<double> epoch_loss;
};

// Supervised pretraining on clean source data: per-epoch shuffle,
// batch-stats BN with running-statistic updates, Adam. The held-out split
// is the trailing val_fraction of the dataset.
PretrainResult pretrain(Model& model, const Dataset& source, const PretrainParams& params,
                        uint64_t seed);

double accuracy_pct(Model& model, const Dataset& data, BnMode bn_mode);

}  // namespace focta
