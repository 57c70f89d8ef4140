import sqlite3


def find_patient(conn, user_id):
    cur = conn.cursor()
    cur.execute("SELECT name, age FROM patients WHERE id = " + user_id)
    return cur.fetchall()


def main():
    print("query helper ready")


if __name__ == "__main__":
    main()
