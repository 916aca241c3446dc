use lapnet::data::SyntheticConfig;
use lapnet::harness::api::{AblateRequest, EvalRequest, GenDataRequest, OpenStreamRequest, TrainRequest};
use lapnet::harness::{RunConfig, Sweep};
use lapnet_client::{Client, ClientError};

async fn client() -> Client {
    let (addr, _) = lapnet_server::spawn(([127, 0, 0, 1], 0).into()).await.unwrap();
    Client::new(format!("http://{addr}/"))
}

#[tokio::test]
async fn drives_every_endpoint() {
    let client = client().await;
    assert_eq!(client.health().await.unwrap()["status"], "ok");
    let dir = tempfile::tempdir().unwrap();

    let gen = client
        .gen_data(&GenDataRequest {
            config: SyntheticConfig {
                num_classes: 2,
                feature_dim: 4,
                num_sequences: 3,
                num_test_sequences: 2,
                length: [40, 50],
                action_length: [6, 10],
                background_length: [4, 8],
                noise: 1.0,
                ..SyntheticConfig::default()
            },
            out_dir: dir.path().join("data"),
        })
        .await
        .unwrap();

    let config = RunConfig {
        l_e: 10,
        l_d: 2,
        progression_states: 2,
        window_size: 2,
        hidden: 5,
        batch_size: 2,
        epochs: 1,
        manifest: Some(gen.manifest.clone()),
        out_dir: dir.path().join("run"),
        ..RunConfig::default()
    };
    let trained = client
        .train(&TrainRequest {
            config: config.clone(),
            resume: None,
        })
        .await
        .unwrap();

    let eval = client
        .eval(&EvalRequest {
            checkpoint: trained.checkpoint.clone(),
            manifest: None,
            split: "train".into(),
            out_dir: Some(dir.path().join("eval")),
        })
        .await
        .unwrap();
    assert_eq!(eval.metrics.sequences, 3);

    let table = client
        .ablate(&AblateRequest {
            config: RunConfig {
                out_dir: dir.path().join("ablate"),
                ..config
            },
            sweep: Sweep::AfsOnOff,
            seeds: vec![1],
        })
        .await
        .unwrap();
    assert_eq!(table.rows.len(), 2);

    let info = client
        .open_stream(&OpenStreamRequest {
            checkpoint: trained.checkpoint,
        })
        .await
        .unwrap();
    let first = client.push_frame(info.id, vec![0.5; 4]).await.unwrap();
    let second = client.push_frame(info.id, vec![0.5; 4]).await.unwrap();
    assert_eq!((first.index, second.index), (0, 1));
    client.close_stream(info.id).await.unwrap();
}

#[tokio::test]
async fn classifies_service_errors() {
    let client = client().await;
    let err = client.push_frame(12345, vec![0.0]).await.unwrap_err();
    assert!(err.is_validation());
    assert!(matches!(err, ClientError::Api { status, .. } if status.as_u16() == 404));

    let dir = tempfile::tempdir().unwrap();
    let err = client
        .open_stream(&OpenStreamRequest {
            checkpoint: dir.path().join("missing.lapc"),
        })
        .await
        .unwrap_err();
    assert!(!err.is_validation());
}

#[tokio::test]
async fn unreachable_service_is_a_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let err = Client::new(format!("http://{addr}")).health().await.unwrap_err();
    assert!(matches!(err, ClientError::Transport(_)));
    assert!(!err.is_validation());
}
