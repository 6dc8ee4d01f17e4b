#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "taylornet.h"

/* Usage: smoke <checkpoint>. Prints "ok" and exits 0 on success. */
int main(int argc, char **argv) {
    if (argc != 2) {
        return 2;
    }
    if (strlen(tn_version()) == 0) {
        return 3;
    }
    TnModel *model = NULL;
    if (tn_model_load("/nonexistent/model.tnck", &model) != TN_STATUS_IO || model != NULL) {
        return 4;
    }
    if (strlen(tn_last_error_message()) == 0) {
        return 5;
    }
    if (tn_model_load(argv[1], &model) != TN_STATUS_OK) {
        fprintf(stderr, "%s\n", tn_last_error_message());
        return 6;
    }
    size_t c, h, w, t;
    if (tn_model_shape(model, &c, &h, &w, &t) != TN_STATUS_OK) {
        return 7;
    }
    size_t frame = c * h * w;
    float *video = malloc(sizeof(float) * (t + 2) * frame);
    float *pred = malloc(sizeof(float) * 2 * frame);
    if (tn_generate_bouncing(h, 1, 7, 0, 1, t + 2, video, (t + 2) * frame) != TN_STATUS_OK) {
        fprintf(stderr, "%s\n", tn_last_error_message());
        return 8;
    }
    if (tn_model_predict(model, video, 1, t, 2, pred, 2 * frame) != TN_STATUS_OK) {
        fprintf(stderr, "%s\n", tn_last_error_message());
        return 9;
    }
    TnFrameMetrics m;
    if (tn_frame_metrics(pred, video + t * frame, c, h, w, &m) != TN_STATUS_OK) {
        return 10;
    }
    if (!(m.mse > 0.0) || m.ssim > 1.0) {
        return 11;
    }
    tn_model_free(model);
    free(video);
    free(pred);
    printf("ok\n");
    return 0;
}
