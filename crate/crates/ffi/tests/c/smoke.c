#include <stdio.h>
#include <string.h>
#include "fibermimo.h"

#define CHECK(call)                                                        \
    do {                                                                   \
        FmStatus s_ = (call);                                              \
        if (s_ != FM_STATUS_OK) {                                          \
            fprintf(stderr, "%s -> %d: %s\n", #call, (int)s_,              \
                    fm_last_error_message());                              \
            return 1;                                                      \
        }                                                                  \
    } while (0)

int main(void) {
    double h0[6] = {0.5, 0.7, 0.9, 1.1, 1.3, 1.5};
    double loss[6] = {0.2, 0.2, 0.2, 0.2, 0.2, 0.2};
    FmChannel *ch = NULL;
    CHECK(fm_channel_new(6, 0.15915494309189535, 0.5, 2.0, h0, loss, &ch));

    double mean = 0.0;
    CHECK(fm_channel_mean(ch, &mean));
    FmVariance var;
    CHECK(fm_channel_variance(ch, 0, 0, &var));

    FmEnsemble *ens = NULL;
    CHECK(fm_ensemble_run(ch, 2000, 7, 4, &ens));
    FmMoments m;
    CHECK(fm_ensemble_moments(ens, &m));
    if (fm_ensemble_len(ens) != m.count) return 2;

    FmChannel *bad = NULL;
    FmStatus s = fm_channel_new(6, 0.1, 0.5, -1.0, h0, loss, &bad);
    if (s != FM_STATUS_INVALID_PARAMETER || bad != NULL || fm_last_error_message() == NULL) return 3;
    if (fm_channel_mean(NULL, &mean) != FM_STATUS_NULL_POINTER) return 4;

    printf("%s %.17g %.17g %llu %.17g\n", fm_version(), mean, var.var_total,
           (unsigned long long)m.count, m.mean);
    fm_ensemble_free(ens);
    fm_channel_free(ch);
    fm_channel_free(NULL);
    return 0;
}
