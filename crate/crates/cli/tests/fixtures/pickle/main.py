import pickle


def load_model(payload):
    return pickle.loads(payload)


def main():
    print("model loader ready")


if __name__ == "__main__":
    main()
